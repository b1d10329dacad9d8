use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

const CONFIG: &str = "d_model = 16\nn_layers = 1\nn_heads = 2\nd_ff = 32\nmax_len = 48\ncontext_window = 2\n\
stage1_epochs = 2\nlearning_rate = 1e-3\nk = 2\n";

fn mplp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mplp"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn gen(dir: &Path, out: &str, seed: &str, extra: &[&str]) {
    let mut args = vec!["gen-data", "--seed", seed, "--out", out, "--set", "n_dialogues=40"];
    for e in extra {
        args.extend(["--set", e]);
    }
    ok(&mplp(&args, dir));
}

#[test]
fn gen_data_is_deterministic_and_parses() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "a", "4", &[]);
    gen(tmp.path(), "b", "4", &[]);
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "signals.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
        assert!(!a.is_empty());
    }
    for line in fs::read_to_string(tmp.path().join("a/train.jsonl")).unwrap().lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert!(tmp.path().join("a/manifest.json").exists());
}

#[test]
fn pure_history_spec_is_confirmed_by_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "h", "2", &["hist_weight=1.0", "exp_weight=0", "lex_weight=0"]);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("h/signals.json")).unwrap()).unwrap();
    assert_eq!(sidecar["pure"], true);
    assert!(sidecar["purity"]["hist"][1].as_u64().unwrap() > 0);
}

#[test]
fn smoke_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let start = Instant::now();
    gen(dir, "data", "1", &[]);
    fs::write(dir.join("cfg.txt"), CONFIG).unwrap();
    let out = ok(&mplp(&["train", "--config", "cfg.txt", "--data", "data", "--out", "run"], dir));
    assert!(out.contains("stage2 test"));
    for f in ["config.txt", "stage1.json", "cache.json", "index.bin", "stage2.json", "manifest.json"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    let eval = ok(&mplp(&["eval", "--run", "run", "--split", "test"], dir));
    assert!(eval.contains("weighted-F1"));
    let saved = fs::read_to_string(dir.join("run/eval_stage2_test.json")).unwrap();
    assert!(saved.contains("confusion"));
    assert!(start.elapsed().as_secs() < 300);

    // retraining into the same directory reproduces the report
    ok(&mplp(&["train", "--config", "cfg.txt", "--data", "data", "--out", "run"], dir));
    assert_eq!(fs::read_to_string(dir.join("run/eval_stage2_test.json")).unwrap(), saved);

    let train = fs::read_to_string(dir.join("data/train.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(train.lines().next().unwrap()).unwrap();
    let dialogue = first["dialogue_id"].as_str().unwrap();
    let id = format!("{dialogue}:0");
    let hits = ok(&mplp(&["retrieve", "--run", "run", "--utterance", &id, "--k", "5"], dir));
    let listed: Vec<&str> = hits.lines().skip(1).filter_map(|l| l.split_whitespace().nth(1)).collect();
    assert_eq!(listed.len(), 5);
    assert!(!listed.contains(&id.as_str()));
    ok(&mplp(&["retrieve", "--run", "run", "--text", "hello", "--k", "2"], dir));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "data", "3", &[]);
    fs::write(dir.join("cfg.txt"), CONFIG).unwrap();
    ok(&mplp(
        &["sweep", "--config", "cfg.txt", "--data", "data", "--out", "sw", "--param", "alpha", "--grid", "0,0.5"],
        dir,
    ));
    let csv = fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("alpha,"));
    assert!(rows[1].starts_with("0,") && rows[2].starts_with("0.5,"));
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&mplp(&["gradcheck", "--scale", "tiny"], tmp.path()));
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(mplp(&["eval", "--run", "missing"], dir).status.code(), Some(2));
    assert_eq!(mplp(&["gen-data", "--out", "x", "--set", "n_dialogues=0"], dir).status.code(), Some(2));
    fs::write(dir.join("bad.txt"), "alpah = 1\n").unwrap();
    gen(dir, "data", "1", &[]);
    let bad = mplp(&["train", "--config", "bad.txt", "--data", "data", "--out", "r"], dir);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(mplp(&["gradcheck", "--scale", "huge"], dir).status.code(), Some(2));
    assert_eq!(mplp(&["frobnicate"], dir).status.code(), Some(2));
}
