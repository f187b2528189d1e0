use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"seed = 3
state_len = 5
list_len = 2
[data]
catalog_size = 60
n_sessions = 120
[embed]
dim = 8
epochs = 2
[agent]
actor_hidden = [16]
critic_hidden = [16]
episodes = 10
steps = 5
warmup = 8
[agent.replay]
batch_size = 8
[eval]
test_sessions = 5
length_class = "short"
"#;

fn lird(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.toml");
    if !cfg.exists() {
        fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_lird"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lird(dir, args);
    assert!(
        out.status.success(),
        "lird {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn pipeline(dir: &Path) {
    for cmd in ["gen", "embed", "build-sim", "train", "eval"] {
        ok(dir, &[cmd]);
    }
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    ok(dir.path(), &["sweep", "--param", "alpha", "--values", "0.2,0.8"]);
    let report = ok(dir.path(), &["report"]);
    assert!(report.contains("Sweep over alpha"));
    let out = dir.path().join("out");
    for f in [
        "sessions.txt",
        "catalog.txt",
        "embeddings.txt",
        "memory.txt",
        "checkpoints/actor.json",
        "checkpoints/critic_target.json",
        "train_log.jsonl",
        "eval.csv",
        "eval.json",
        "timing.csv",
        "sweep_alpha.csv",
        "report.md",
        "summary.json",
        "gen.config.toml",
        "eval.config.toml",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let eval = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 4, "{eval}");
}

#[test]
fn missing_checkpoint_names_the_train_command() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen", "embed", "build-sim"] {
        ok(dir.path(), &[cmd]);
    }
    let out = lird(dir.path(), &["eval"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lird train"), "{err}");
}

#[test]
fn missing_sessions_name_the_gen_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = lird(dir.path(), &["embed"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lird gen"));
}

#[test]
fn k_sweep_has_one_row_per_value_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen"]);
    ok(dir.path(), &["embed"]);
    ok(dir.path(), &["sweep", "--param", "K", "--values", "1,2,3,4"]);
    let text = fs::read_to_string(dir.path().join("out/sweep_k.csv")).unwrap();
    let lird_rows: Vec<&str> = text.lines().skip(1).filter(|l| l.contains(",lird,")).collect();
    assert_eq!(lird_rows.len(), 4, "{text}");
    assert!(lird_rows[0].contains("item-wise"));
    assert!(lird_rows[3].contains("list-wise"));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "11", "--sessions", "50", "gen"]);
    let echo = fs::read_to_string(dir.path().join("out/gen.config.toml")).unwrap();
    assert!(echo.contains("seed = 11"));
    assert!(echo.contains("n_sessions = 50"));
    let sessions = fs::read_to_string(dir.path().join("out/sessions.txt")).unwrap();
    assert!(!sessions.is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "sessions.txt",
        "embeddings.txt",
        "memory.txt",
        "checkpoints/actor.json",
        "train_log.jsonl",
        "eval.csv",
        "eval.json",
    ] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}
