//! The five `cwct` subcommands as library calls. Each returns a report the
//! binary prints; failures carry their exit code in [`CliError`].

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cwct_core::cost::{circular_step_macs, sliding_step_macs};
use cwct_core::metrics::{mean_ap, mean_cap, ClassMean, LabelSequence};
use cwct_core::{
    batch_forward_many, default_config, init_weights, Engine, Matrix, Model, ModelConfig, RingSnapshot,
    SlidingBaseline, StepResult, WeightStore,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config_file::parse_config;
use crate::container::{decode_weights, encode_snapshot, encode_weights};
use crate::error::CliError;
use crate::features::decode_features;
use crate::tables::{parse_labels, parse_predictions, write_prediction_row};

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

fn text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ModelConfig, CliError> {
    let config = parse_config(&text(path)?)
        .map_err(|e| CliError::ConfigFile { path: path.into(), line: e.line, source: e.error })?;
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(CliError::Violations(violations));
    }
    Ok(config)
}

pub fn load_weights(path: &Path) -> Result<WeightStore, CliError> {
    decode_weights(&read(path)?).map_err(|source| CliError::Format { path: path.into(), source })
}

/// Default settings sized to the weights: input width from the history
/// projection, class count from the classifier, decoder if present.
pub fn infer_config(store: &WeightStore) -> Result<ModelConfig, CliError> {
    let proj = store
        .get("cwhe.proj_hist")
        .filter(|t| t.shape().len() == 2)
        .ok_or_else(|| CliError::Config("weights have no 2-d `cwhe.proj_hist`; pass --config".into()))?;
    let mut c = default_config(proj.shape()[1]);
    if let Some(b) = store.get("cls.bias") {
        c.num_actions = b.data().len();
    }
    c.oas_decoder = store.iter().any(|(n, _)| n.starts_with("swhd."));
    let violations = c.validate();
    if !violations.is_empty() {
        return Err(CliError::Violations(violations));
    }
    Ok(c)
}

pub fn load_model(weights: &Path, config: Option<&Path>) -> Result<Arc<Model>, CliError> {
    let store = load_weights(weights)?;
    let config = match config {
        Some(p) => load_config(p)?,
        None => infer_config(&store)?,
    };
    Ok(Arc::new(Model::from_store(&config, &store)?))
}

fn load_features(path: &Path, model: &Model) -> Result<Matrix, CliError> {
    let frames = decode_features(&read(path)?).map_err(|source| CliError::Format { path: path.into(), source })?;
    let d = model.config().input_dim;
    if frames.cols() != d {
        return Err(CliError::Dimension(format!("{}: features have {} channels, model expects {d}", path.display(), frames.cols())));
    }
    Ok(frames)
}

/// Uniform frames in `[-1, 1)` from a seeded stream.
pub fn random_frames(frames: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(frames, dim, |_, _| rng.random_range(-1.0f32..1.0))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InitReport {
    pub tensors: usize,
    pub parameters: usize,
    pub bytes: usize,
}

pub fn init(config: &Path, seed: Option<u64>, out: &Path) -> Result<InitReport, CliError> {
    let c = load_config(config)?;
    let store = init_weights(&c, seed.unwrap_or(c.seed))?;
    let bytes = encode_weights(&store).map_err(|source| CliError::Format { path: out.into(), source })?;
    write(out, &bytes)?;
    Ok(InitReport { tensors: store.len(), parameters: store.parameter_count(), bytes: bytes.len() })
}

pub struct StreamArgs {
    pub weights: PathBuf,
    pub config: Option<PathBuf>,
    pub features: PathBuf,
    pub out: Option<PathBuf>,
    /// Where to dump the final ring state.
    pub snapshot: Option<PathBuf>,
}

/// Streams every frame and writes one refined-probability row per frame.
/// Returns the row count.
pub fn stream(args: &StreamArgs, stdout: &mut dyn Write) -> Result<usize, CliError> {
    let model = load_model(&args.weights, args.config.as_deref())?;
    let frames = load_features(&args.features, &model)?;
    let mut engine = Engine::new(Arc::clone(&model));

    let mut file;
    let sink: &mut dyn Write = match &args.out {
        Some(p) => {
            file = BufWriter::new(fs::File::create(p).map_err(|source| CliError::Io { path: p.clone(), source })?);
            &mut file
        }
        None => stdout,
    };
    let io = |source| CliError::Io { path: args.out.clone().unwrap_or_else(|| "<stdout>".into()), source };
    for t in 0..frames.rows() {
        let r = engine.step(frames.row(t))?;
        write_prediction_row(sink, t, &r.refined).map_err(io)?;
    }
    sink.flush().map_err(io)?;

    if let Some(p) = &args.snapshot {
        let bytes = encode_snapshot(&engine.snapshot()).map_err(|source| CliError::Format { path: p.clone(), source })?;
        write(p, &bytes)?;
    }
    Ok(frames.rows())
}

pub enum Input {
    Features(PathBuf),
    Random { frames: usize, seed: u64 },
}

pub struct VerifyArgs {
    pub weights: PathBuf,
    pub config: Option<PathBuf>,
    pub input: Input,
    pub tolerance: f32,
    /// Debugging: perturb this window's cached summary after warmup.
    pub corrupt_window: Option<usize>,
    /// Snapshots recomputed together per batch call.
    pub chunk: usize,
}

/// First frame whose streaming output left the tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub frame: usize,
    pub gap: f32,
    /// Stale window found by re-encoding the ring at that frame, with its
    /// max-abs summary gap.
    pub stale_window: Option<(usize, f32)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub frames: usize,
    pub tolerance: f32,
    pub max_divergence: f32,
    pub worst_frame: usize,
    pub first_failure: Option<Divergence>,
    /// Window encodes performed by each streaming step.
    pub encodes_per_frame: Vec<u64>,
    pub elapsed: Duration,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames          {}", self.frames)?;
        writeln!(f, "max divergence  {:e} (frame {})", self.max_divergence, self.worst_frame)?;
        writeln!(f, "tolerance       {:e}", self.tolerance)?;
        writeln!(f, "elapsed         {:.2} s", self.elapsed.as_secs_f64())?;
        match &self.first_failure {
            None => write!(f, "PASS"),
            Some(d) => {
                write!(f, "FAIL at frame {}: divergence {:e}", d.frame, d.gap)?;
                match d.stale_window {
                    Some((n, g)) => write!(f, "; cached summary of window {n} is stale by {g:e}"),
                    None => write!(f, "; no stale window summary found"),
                }
            }
        }
    }
}

fn row_gap(s: &StepResult, refined: &Matrix, coarse: &Matrix) -> f32 {
    let last = |m: &Matrix| m.row(m.rows() - 1).to_vec();
    let gap = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    gap(&s.refined, &last(refined)).max(gap(&s.coarse, &last(coarse)))
}

/// Re-encodes each window of `snapshot` and returns the most stale one.
fn stalest_window(model: &Arc<Model>, snapshot: &RingSnapshot) -> Result<Option<(usize, f32)>, CliError> {
    let gaps = Engine::from_snapshot(Arc::clone(model), snapshot)?.audit_cache();
    Ok(gaps
        .into_iter()
        .enumerate()
        .filter(|&(_, g)| g > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1)))
}

/// Runs the streaming engine and, for every frame, a full batch
/// recomputation from the same ring state.
pub fn verify(args: &VerifyArgs) -> Result<VerifyReport, CliError> {
    let model = load_model(&args.weights, args.config.as_deref())?;
    let frames = match &args.input {
        Input::Features(p) => load_features(p, &model)?,
        Input::Random { frames, seed } => random_frames(*frames, model.config().input_dim, *seed),
    };
    if let Some(n) = args.corrupt_window {
        let windows = model.config().num_windows;
        if n >= windows {
            return Err(CliError::Config(format!("--corrupt-window {n} out of range, model has {windows} windows")));
        }
    }
    verify_model(&model, &frames, args.tolerance, args.corrupt_window, args.chunk)
}

/// [`verify`] on an already loaded model and frame matrix.
pub fn verify_model(
    model: &Arc<Model>,
    frames: &Matrix,
    tolerance: f32,
    corrupt_window: Option<usize>,
    chunk: usize,
) -> Result<VerifyReport, CliError> {
    let start = Instant::now();
    let mut engine = Engine::new(Arc::clone(model));
    if let Some(n) = corrupt_window {
        engine.corrupt_summary(n, 1.0);
    }
    let mut report = VerifyReport {
        frames: frames.rows(),
        tolerance,
        max_divergence: 0.0,
        worst_frame: 0,
        first_failure: None,
        encodes_per_frame: Vec::with_capacity(frames.rows()),
        elapsed: Duration::ZERO,
    };
    let chunk = chunk.max(1);
    let mut pending: Vec<(usize, StepResult, RingSnapshot)> = Vec::with_capacity(chunk);
    let mut encodes = engine.counters().window_encodes;
    for t in 0..frames.rows() {
        let r = engine.step(frames.row(t))?;
        report.encodes_per_frame.push(r.counters.window_encodes - encodes);
        encodes = r.counters.window_encodes;
        pending.push((t, r, engine.snapshot()));
        if pending.len() < chunk && t + 1 < frames.rows() {
            continue;
        }
        let snaps: Vec<RingSnapshot> = pending.iter().map(|p| p.2.clone()).collect();
        let batch = batch_forward_many(model, &snaps, false)?;
        for ((frame, r, snap), b) in pending.drain(..).zip(batch) {
            let gap = row_gap(&r, b.trend.refined.probs(), b.trend.coarse.probs());
            if gap > report.max_divergence {
                report.max_divergence = gap;
                report.worst_frame = frame;
            }
            if gap > tolerance && report.first_failure.is_none() {
                report.first_failure = Some(Divergence { frame, gap, stale_window: stalest_window(model, &snap)? });
            }
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

pub struct BenchArgs {
    pub weights: PathBuf,
    pub config: Option<PathBuf>,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeReport {
    pub steps: usize,
    pub wall: Duration,
    pub window_encodes: u64,
    pub macs_per_step: u64,
    pub window_macs_per_step: u64,
}

impl ModeReport {
    pub fn steps_per_second(&self) -> f64 {
        self.steps as f64 / self.wall.as_secs_f64()
    }

    pub fn ms_per_step(&self) -> f64 {
        self.wall.as_secs_f64() * 1e3 / self.steps as f64
    }

    pub fn encodes_per_step(&self) -> f64 {
        self.window_encodes as f64 / self.steps as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub circular: ModeReport,
    pub sliding: ModeReport,
    /// Steps that ended with the cursor on a window boundary.
    pub boundary_steps: usize,
    pub boundary_divergence: f32,
}

impl BenchReport {
    pub fn wall_ratio(&self) -> f64 {
        self.sliding.wall.as_secs_f64() / self.circular.wall.as_secs_f64()
    }

    pub fn encode_ratio(&self) -> f64 {
        self.sliding.window_encodes as f64 / self.circular.window_encodes as f64
    }

    pub fn window_mac_ratio(&self) -> f64 {
        self.sliding.window_macs_per_step as f64 / self.circular.window_macs_per_step as f64
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode      steps/s   ms/step  encodes/step   MACs/step  window MACs/step")?;
        for (name, m) in [("circular", &self.circular), ("sliding", &self.sliding)] {
            writeln!(
                f,
                "{name:<8} {:>8.2} {:>9.2} {:>13.2} {:>11} {:>17}",
                m.steps_per_second(),
                m.ms_per_step(),
                m.encodes_per_step(),
                m.macs_per_step,
                m.window_macs_per_step
            )?;
        }
        writeln!(f, "encode ratio      {:.3}", self.encode_ratio())?;
        writeln!(f, "window MAC ratio  {:.3}", self.window_mac_ratio())?;
        writeln!(f, "wall ratio        {:.3}", self.wall_ratio())?;
        write!(f, "boundary steps    {} (max divergence {:e})", self.boundary_steps, self.boundary_divergence)
    }
}

/// Times circular and sliding updating over the same synthetic stream,
/// after filling the trend queue so every timed step evicts a frame.
pub fn bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    let model = load_model(&args.weights, args.config.as_deref())?;
    bench_model(&model, args.steps, args.seed)
}

/// [`bench`] on an already loaded model.
pub fn bench_model(model: &Arc<Model>, steps: usize, seed: u64) -> Result<BenchReport, CliError> {
    let c = model.config().clone();
    let frames = random_frames(c.trend_len + steps, c.input_dim, seed);
    let mut circ = Engine::new(Arc::clone(model));
    let mut slide = SlidingBaseline::new(Arc::clone(model));
    for t in 0..c.trend_len {
        circ.step(frames.row(t))?;
        slide.step(frames.row(t))?;
    }
    let (c0, s0) = (circ.counters().window_encodes, slide.counters().window_encodes);
    let (mut tc, mut ts) = (Duration::ZERO, Duration::ZERO);
    let (mut boundary_steps, mut boundary_divergence) = (0, 0.0f32);
    let w = c.window_size();
    for t in c.trend_len..frames.rows() {
        let x = frames.row(t);
        let clock = Instant::now();
        let a = circ.step(x)?;
        tc += clock.elapsed();
        let clock = Instant::now();
        let b = slide.step(x)?;
        ts += clock.elapsed();
        if circ.cursor() % w == 0 {
            boundary_steps += 1;
            let gap = a.refined.iter().zip(&b.refined).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
            boundary_divergence = boundary_divergence.max(gap);
        }
    }
    let (circ_cost, slide_cost) = (circular_step_macs(&c), sliding_step_macs(&c));
    Ok(BenchReport {
        circular: ModeReport {
            steps,
            wall: tc,
            window_encodes: circ.counters().window_encodes - c0,
            macs_per_step: circ_cost.total(),
            window_macs_per_step: circ_cost.window_encoder,
        },
        sliding: ModeReport {
            steps,
            wall: ts,
            window_encodes: slide.counters().window_encodes - s0,
            macs_per_step: slide_cost.total(),
            window_macs_per_step: slide_cost.window_encoder,
        },
        boundary_steps,
        boundary_divergence,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub map: ClassMean,
    pub mcap: ClassMean,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mAP  {:.4}", self.map.mean)?;
        write!(f, "mcAP {:.4}", self.mcap.mean)
    }
}

/// mAP and mcAP of a prediction CSV against a label CSV. Skipped classes
/// are reported on `warnings`.
pub fn eval(predictions: &Path, labels: &Path, warnings: &mut dyn Write) -> Result<EvalReport, CliError> {
    let (frames, table) =
        parse_predictions(&text(predictions)?).map_err(|source| CliError::Format { path: predictions.into(), source })?;
    let rows = parse_labels(&text(labels)?).map_err(|source| CliError::Format { path: labels.into(), source })?;
    if rows.len() != frames.len() {
        return Err(CliError::Mismatch(format!("{} prediction rows but {} label rows", frames.len(), rows.len())));
    }
    if let Some((i, (&f, &(g, _)))) = frames.iter().zip(&rows).enumerate().find(|(_, (f, r))| **f != r.0) {
        return Err(CliError::Mismatch(format!("row {i}: prediction frame {f} but label frame {g}")));
    }
    let classes = table.cols();
    let labels = LabelSequence::new(rows.iter().map(|r| r.1).collect(), classes)
        .map_err(|e| CliError::Mismatch(format!("labels do not fit {classes} prediction columns: {e}")))?;
    let map = mean_ap(&table, &labels)?;
    let mcap = mean_cap(&table, &labels)?;
    let note = |w: &mut dyn Write, class: usize, why: &str| writeln!(w, "warning: class {class} {why}; skipped").ok();
    for &k in &map.skipped {
        note(warnings, k, "has no positive frames");
    }
    for k in mcap.skipped.iter().filter(|k| !map.skipped.contains(k)) {
        note(warnings, *k, "has no negative frames for mcAP");
    }
    Ok(EvalReport { map, mcap })
}
