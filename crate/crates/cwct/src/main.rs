use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use cwct::commands::{self, BenchArgs, Input, StreamArgs, VerifyArgs};
use cwct::CliError;

#[derive(Parser)]
#[command(name = "cwct", version, about = "Circular-window streaming action detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write seeded random weights for a config.
    Init {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame refined probabilities as CSV.
    Stream {
        #[arg(long)]
        weights: PathBuf,
        /// Defaults sized to the weights when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        /// Standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump the final ring state here.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Check streaming output against full recomputation at every frame.
    #[command(group(ArgGroup::new("input").required(true).args(["features", "random"])))]
    Verify {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Verify on this many seeded random frames.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f32,
        #[arg(long, default_value_t = 8)]
        chunk: usize,
        #[arg(long, hide = true)]
        corrupt_window: Option<usize>,
    },
    /// Time circular against sliding updating.
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// mAP and mcAP of a prediction CSV.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cmd {
        Cmd::Init { config, seed, out } => {
            let r = commands::init(&config, seed, &out)?;
            println!("wrote {} ({} tensors, {} parameters, {} bytes)", out.display(), r.tensors, r.parameters, r.bytes);
        }
        Cmd::Stream { weights, config, features, out, snapshot } => {
            let n = commands::stream(&StreamArgs { weights, config, features, out: out.clone(), snapshot }, &mut stdout)?;
            if let Some(p) = out {
                eprintln!("wrote {n} rows to {}", p.display());
            }
        }
        Cmd::Verify { weights, config, features, random, seed, tolerance, chunk, corrupt_window } => {
            let input = match (features, random) {
                (Some(p), _) => Input::Features(p),
                (None, Some(frames)) => Input::Random { frames, seed },
                (None, None) => unreachable!("clap requires one input"),
            };
            let report = commands::verify(&VerifyArgs { weights, config, input, tolerance, corrupt_window, chunk })?;
            println!("{report}");
            if !report.passed() {
                return Err(CliError::Failed("streaming and batch outputs disagree".into()));
            }
        }
        Cmd::Bench { weights, config, steps, seed } => {
            let report = commands::bench(&BenchArgs { weights, config, steps: steps.max(1), seed })?;
            println!("{report}");
            if report.boundary_divergence > 1e-5 {
                return Err(CliError::Failed("circular and sliding outputs disagree at a window boundary".into()));
            }
        }
        Cmd::Eval { predictions, labels } => {
            let report = commands::eval(&predictions, &labels, &mut std::io::stderr())?;
            println!("{report}");
        }
    }
    stdout.flush().ok();
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
