use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cwct::commands::random_frames;
use cwct::features::encode_features;
use cwct_core::Matrix;

const SMALL: &str = "input_dim = 12\nhistory_len = 16\ntrend_len = 4\nnum_windows = 4\nhistory_dim = 8\ntrend_dim = 32
stage_reduction = 2,2\nmsa_heads = 2\nmtsm_heads = 2\nnum_actions = 5\ndecoder_expansion = 2,1,2
decoder_swin_layers = 1,2,1,2\ndecoder_window_size = 4\n";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Self { dir: tempfile::tempdir().unwrap() };
        fs::write(w.path("small.cfg"), SMALL).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cwct")).current_dir(self.dir.path()).args(args).output().unwrap()
    }

    fn weights(&self) -> &Self {
        let o = self.run(&["init", "--config", "small.cfg", "--seed", "42", "--out", "w.cwct"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        self
    }

    fn features(&self, name: &str, frames: &Matrix) {
        fs::write(self.path(name), encode_features(frames).unwrap()).unwrap();
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn init_is_deterministic_and_validates() {
    let w = Workspace::new();
    w.run(&["init", "--config", "small.cfg", "--seed", "42", "--out", "a.cwct"]);
    w.run(&["init", "--config", "small.cfg", "--seed", "42", "--out", "b.cwct"]);
    w.run(&["init", "--config", "small.cfg", "--seed", "43", "--out", "c.cwct"]);
    assert_eq!(bytes(&w.path("a.cwct")), bytes(&w.path("b.cwct")));
    assert_ne!(bytes(&w.path("a.cwct")), bytes(&w.path("c.cwct")));
    let store = cwct::container::decode_weights(&bytes(&w.path("a.cwct"))).unwrap();
    let c = cwct::config_file::parse_config(SMALL).unwrap();
    assert!(cwct_core::Model::from_store(&c, &store).is_ok());

    fs::write(w.path("bad.cfg"), "input_dim = 12\nnum_windows = 15\n").unwrap();
    let o = w.run(&["init", "--config", "bad.cfg", "--out", "x.cwct"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("m_L mod N_w"), "{}", stderr(&o));
    fs::write(w.path("typo.cfg"), "input_dim = 12\nhistroy_len = 8\n").unwrap();
    let o = w.run(&["init", "--config", "typo.cfg", "--out", "x.cwct"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"));
    assert!(!w.path("x.cwct").exists());
}

#[test]
fn stream_writes_one_distribution_per_frame() {
    let w = Workspace::new();
    w.weights();
    w.features("f.feat", &random_frames(37, 12, 5));
    let args = ["stream", "--weights", "w.cwct", "--config", "small.cfg", "--features", "f.feat", "--out"];
    assert_eq!(code(&w.run(&[&args[..], &["a.csv", "--snapshot", "s.cwct"]].concat())), 0);
    assert_eq!(code(&w.run(&[&args[..], &["b.csv"]].concat())), 0);
    let text = fs::read_to_string(w.path("a.csv")).unwrap();
    assert_eq!(text, fs::read_to_string(w.path("b.csv")).unwrap());
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 37);
    for (t, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[0], t.to_string());
        let sum: f64 = fields[1..].iter().map(|f| f.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }
    let snap = cwct::container::decode_snapshot(&bytes(&w.path("s.cwct"))).unwrap();
    assert_eq!(snap.cursor, (37 - 4) % 16);

    // Without --config the defaults are used and the shapes disagree.
    let o = w.run(&["stream", "--weights", "w.cwct", "--features", "f.feat"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    w.features("narrow.feat", &random_frames(5, 11, 5));
    let o = w.run(&["stream", "--weights", "w.cwct", "--config", "small.cfg", "--features", "narrow.feat"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("11 channels"));

    fs::write(w.path("broken.feat"), b"FEAT\x01\0\0\0\x05\0\0\0").unwrap();
    let o = w.run(&["stream", "--weights", "w.cwct", "--config", "small.cfg", "--features", "broken.feat"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("byte 12, feature dim"), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_localizes_a_corrupted_window() {
    let w = Workspace::new();
    w.weights();
    let o = w.run(&["verify", "--weights", "w.cwct", "--config", "small.cfg", "--random", "300", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));

    w.features("f.feat", &random_frames(40, 12, 1));
    let o = w.run(&["verify", "--weights", "w.cwct", "--config", "small.cfg", "--features", "f.feat", "--tolerance", "0"]);
    assert!(stdout(&o).contains("max divergence"), "{}", stdout(&o));

    for window in [0, 3] {
        let n = window.to_string();
        let o = w.run(&[
            "verify", "--weights", "w.cwct", "--config", "small.cfg", "--random", "20", "--corrupt-window", &n,
        ]);
        assert_eq!(code(&o), 1);
        assert!(stdout(&o).contains(&format!("cached summary of window {window} is stale")), "{}", stdout(&o));
    }
    let o = w.run(&["verify", "--weights", "w.cwct", "--config", "small.cfg", "--random", "3", "--corrupt-window", "4"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bench_reports_both_modes() {
    let w = Workspace::new();
    w.weights();
    let o = w.run(&["bench", "--weights", "w.cwct", "--config", "small.cfg", "--steps", "48"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("encode ratio      4.000"), "{text}");
    assert!(text.contains("window MAC ratio  4.000"), "{text}");
    assert!(text.contains("boundary steps    12"), "{text}");
    let circular = text.lines().find(|l| l.starts_with("circular")).unwrap();
    assert_eq!(circular.split_whitespace().nth(3), Some("1.00"));
}

#[test]
fn eval_scores_prediction_files() {
    let w = Workspace::new();
    let labels = [1, 0, 2, 2, 0, 1];
    let onehot: String = labels
        .iter()
        .enumerate()
        .map(|(t, &l)| format!("{t},{}\n", (0..4).map(|k| if k == l { "1" } else { "0" }).collect::<Vec<_>>().join(",")))
        .collect();
    let label_csv: String = labels.iter().enumerate().map(|(t, l)| format!("{t},{l}\n")).collect();
    fs::write(w.path("p.csv"), onehot).unwrap();
    fs::write(w.path("l.csv"), label_csv).unwrap();
    let o = w.run(&["eval", "--predictions", "p.csv", "--labels", "l.csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "mAP  1.0000\nmcAP 1.0000\n");
    assert!(stderr(&o).contains("warning: class 3 has no positive frames; skipped"));

    // The hand case: one class, scores 0.9 0.8 0.1, positives at the ends.
    fs::write(w.path("h.csv"), "0,0.1,0.9\n1,0.2,0.8\n2,0.9,0.1\n").unwrap();
    fs::write(w.path("hl.csv"), "0,1\n1,0\n2,1\n").unwrap();
    let o = w.run(&["eval", "--predictions", "h.csv", "--labels", "hl.csv"]);
    assert!(stdout(&o).starts_with("mAP  0.8333\n"), "{}", stdout(&o));

    fs::write(w.path("short.csv"), "0,1\n1,0\n").unwrap();
    let o = w.run(&["eval", "--predictions", "h.csv", "--labels", "short.csv"]);
    assert_eq!(code(&o), 4);
    fs::write(w.path("shifted.csv"), "1,1\n2,0\n3,1\n").unwrap();
    assert_eq!(code(&w.run(&["eval", "--predictions", "h.csv", "--labels", "shifted.csv"])), 4);
    fs::write(w.path("wide.csv"), "0,1\n1,5\n2,1\n").unwrap();
    assert_eq!(code(&w.run(&["eval", "--predictions", "h.csv", "--labels", "wide.csv"])), 4);
    fs::write(w.path("bg.csv"), "0,0\n1,0\n2,0\n").unwrap();
    assert_eq!(code(&w.run(&["eval", "--predictions", "h.csv", "--labels", "bg.csv"])), 4);
}
