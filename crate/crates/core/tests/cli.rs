use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 8

[model]
d = 8
layers = 2

[synth]
train_videos = 24
test_videos = 8
frames = 6
proposals_per_frame = 4

[train]
learning_rate = 0.05
momentum = 0.9
batch_size = 8
iters = 20
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regiongraph"))
        .arg("--config")
        .arg(dir.join("run.toml"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("RGRAPH_SEED")
        .output()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn synth_and_train_are_byte_reproducible() {
    let a = setup(SMALL);
    let b = setup(SMALL);
    for dir in [a.path(), b.path()] {
        for cmd in ["synth", "train"] {
            assert_eq!(run(dir, &[cmd]).status.code(), Some(0), "{cmd}");
        }
    }
    for file in ["data/train/proposals.ndjson", "data/train/labels.ndjson", "metrics.ndjson", "model.ckpt"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    // Running again in place reproduces the same files.
    let before = fs::read(a.path().join("model.ckpt")).unwrap();
    assert_eq!(run(a.path(), &["train"]).status.code(), Some(0));
    assert_eq!(fs::read(a.path().join("model.ckpt")).unwrap(), before);
    assert!(a.path().join("config.train.toml").exists());
}

#[test]
fn graph_dumps_and_exports() {
    let dir = setup(SMALL);
    for cmd in ["synth", "build-graph", "export"] {
        let out = run(dir.path(), &[cmd]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let dump = fs::read_to_string(dir.path().join("graphs/v00000.json")).unwrap();
    assert!(dump.contains("\"front\""));
    let dot = fs::read_to_string(dir.path().join("export/v00000.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
}

#[test]
fn packed_format_end_to_end() {
    let dir = setup(SMALL);
    for cmd in ["synth", "train", "eval"] {
        assert_eq!(run(dir.path(), &["--format", "bin", cmd]).status.code(), Some(0), "{cmd}");
    }
    assert!(dir.path().join("data/train/dataset.bin").exists());
}

#[test]
fn usage_errors_exit_1() {
    let dir = setup(SMALL);
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--clips", "0", "eval"]).status.code(), Some(1));
    let bad = setup("[model]\nwidth = 3\n");
    assert_eq!(run(bad.path(), &["synth"]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_2_and_leaves_a_marker() {
    let dir = setup(SMALL);
    let out = run(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(fs::read_to_string(dir.path().join("FAILED")).unwrap().starts_with("train"));
    // A later success clears the marker.
    assert_eq!(run(dir.path(), &["synth"]).status.code(), Some(0));
    assert!(!dir.path().join("FAILED").exists());
}

#[test]
fn divergence_exits_3_with_a_snapshot() {
    let dir = setup(SMALL);
    assert_eq!(run(dir.path(), &["synth"]).status.code(), Some(0));
    let out = run(dir.path(), &["--lr", "1e300", "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("diagnostic.ckpt").exists());
}

#[test]
fn failing_gradcheck_exits_3() {
    let dir = setup("[gradcheck]\ntolerance = 1e-300\n");
    assert_eq!(run(dir.path(), &["gradcheck"]).status.code(), Some(3));
    let ok = setup("");
    assert_eq!(run(ok.path(), &["gradcheck"]).status.code(), Some(0));
}

#[test]
fn env_overrides_apply() {
    let dir = setup(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_regiongraph"))
        .arg("--config")
        .arg(dir.path().join("run.toml"))
        .arg("--out-dir")
        .arg(dir.path())
        .arg("synth")
        .env("RGRAPH_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let written = fs::read_to_string(dir.path().join("config.synth.toml")).unwrap();
    assert!(written.contains("seed = 77"), "{written}");
}
