use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hydramix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

/// A tiny dataset and a one-epoch training config.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = write(dir, "spec.json", &json!({"n_train": 24, "n_test": 9, "seed": 3}));
    let data = dir.join("data");
    let out = run(&["generate", "--spec", s(&spec), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = write(
        dir,
        "run.json",
        &json!({"hyper": {"epochs": 2, "batch_size": 8, "k_augment": 1}}),
    );
    (data, cfg)
}

#[test]
fn generate_reports_counts_and_stable_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", &json!({"n_train": 6, "n_test": 3}));
    let a = run(&["generate", "--spec", s(&spec), "--out", s(&dir.path().join("a"))]);
    let b = run(&["generate", "--spec", s(&spec), "--out", s(&dir.path().join("b"))]);
    assert!(a.status.success());
    let a = String::from_utf8(a.stdout).unwrap();
    assert!(a.contains("Train tumour: 2"), "{a}");
    assert!(dir.path().join("a/manifest.json").exists());
    let sum = |t: &str| t.lines().find(|l| l.starts_with("checksum")).unwrap().to_string();
    assert_eq!(sum(&a), sum(&String::from_utf8(b.stdout).unwrap()));
}

#[test]
fn generate_rejects_empty_classes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", &json!({"classes": []}));
    let out = run(&["generate", "--spec", s(&spec), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn train_missing_dataset_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data", s(&dir.path().join("none")), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_config_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let cfg = write(dir.path(), "bad.json", &json!({"hyper": {"epochz": 1}}));
    let out = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--data", s(&data), "--out", s(&dir.path().join("r")), "--mode", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir),
        "--mode", "supervised", "--budget", "full",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config_resolved.json", "metrics.jsonl", "ckpt_final.hmxw", "ckpt_best.hmxw"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let resolved: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("config_resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["hyper"]["mode"], "supervised");
    assert_eq!(resolved["hyper"]["lr_start"], 0.001);
    assert_eq!(resolved["budget"], 24);
    assert_eq!(resolved["model"]["depth"], 10);

    let metrics = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    let last: Value = serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    let ckpt = run_dir.join("ckpt_final.hmxw");
    let e1 = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&data)]);
    let e2 = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&data)]);
    assert!(e1.status.success());
    assert_eq!(e1.stdout, e2.stdout);
    let ev: Value = serde_json::from_slice(&e1.stdout).unwrap();
    for key in ["test_accuracy", "confusion", "mean_centroid_error"] {
        assert_eq!(ev[key], last[key], "{key}");
    }
}

#[test]
fn eval_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let run_dir = dir.path().join("run");
    let out = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir), "--budget", "6", "--mode", "partial"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run_dir.join("ckpt_final.hmxw");

    let spec = write(dir.path(), "four.json", &json!({"n_train": 8, "n_test": 4, "classes": ["a", "b", "c", "background"]}));
    let four = dir.path().join("four");
    assert!(run(&["generate", "--spec", s(&spec), "--out", s(&four)]).status.success());
    let out = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&four)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('3') && err.contains('4'), "{err}");

    let bytes = fs::read(&ckpt).unwrap();
    let broken = dir.path().join("broken.hmxw");
    fs::write(&broken, &bytes[..bytes.len() / 3]).unwrap();
    let out = run(&["eval", "--ckpt", s(&broken), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset"));
}

#[test]
fn diverging_run_exits_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let cfg = write(
        dir.path(),
        "hot.json",
        &json!({"hyper": {"epochs": 2, "batch_size": 8, "lr_start": 1e30, "lr_end": 1e29}}),
    );
    let out = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("r")), "--mode", "partial", "--budget", "12"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn single_cell_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep", "--config", s(&cfg), "--data", s(&data), "--out", s(&out_dir),
        "--budgets", "6", "--modes", "partial", "--seeds", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "mode,budget,seed,final_accuracy,mean_centroid_error");
    let acc: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("sweep_summary.json")).unwrap()).unwrap();
    let mean = summary["cells"][0]["mean_accuracy"].as_f64().unwrap();
    assert!((mean - acc).abs() < 1e-9);
    assert!(out_dir.join("sweep_table.txt").exists());
    assert!(out_dir.join("cells/partial_b6_s0.jsonl").exists());
}

#[test]
fn sweep_budget_beyond_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = run(&[
        "sweep", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o")),
        "--modes", "partial", "--seeds", "1",
    ]);
    // the default budget list reaches 3000, far beyond 24 records
    assert_eq!(out.status.code(), Some(2));
}
