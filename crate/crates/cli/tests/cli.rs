use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diveoff_cli::{file_sha256, RunManifest};

fn diveoff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diveoff"))
        .args(args)
        .output()
        .expect("spawn diveoff")
}

fn ok(args: &[&str]) -> Output {
    let out = diveoff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let data = dir.join(name);
    ok(&["gen-data", "--out", s(&data), "--seed", seed, "--episodes-per-style", "4"]);
    data
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, "pretrain_steps = 5\nlog_interval = 2\nbatch_size = 16\n[model]\nhidden = 8\n").unwrap();
    p
}

#[test]
fn gen_data_is_deterministic_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_data(dir.path(), "a.bin", "3");
    let b = small_data(dir.path(), "b.bin", "3");
    let c = small_data(dir.path(), "c.bin", "4");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let m = RunManifest::read(dir.path().join("a.bin.manifest.json")).unwrap();
    assert_eq!(m.command, "gen-data");
    assert_eq!(m.seed, 3);
    assert_eq!(m.outputs[0].sha256, file_sha256(&a).unwrap());
    assert_eq!(m.config["episodes_per_style"], 4);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = diveoff(&["train", "--algo", "sac", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    let out = diveoff(&["gen-data", "--out", s(&dir.path().join("d.bin")), "--styles", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let data = small_data(dir.path(), "d.bin", "0");
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "gamma = 2.0\n").unwrap();
    let out = diveoff(&["train", "--data", s(&data), "--out", s(&dir.path().join("r")), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = diveoff(&[
        "train",
        "--data",
        s(&dir.path().join("missing.bin")),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = diveoff(&["eval", "--ckpt", s(&garbage), "--report", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_with_tiny_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d.bin", "1");
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--out", s(&run), "--steps", "4", "--seed", "2", "--config", s(&cfg)]);

    let m = RunManifest::read(run.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 2);
    assert_eq!(m.config["train"]["total_steps"], 4);
    assert_eq!(m.config["train"]["model"]["hidden"], 8);
    assert!(m.changed_inputs().unwrap().is_empty());
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let ckpt = run.join("ckpt.bin");
    let report = dir.path().join("eval.json");
    let out = ok(&["eval", "--ckpt", s(&ckpt), "--episodes", "1", "--z-grid", "2", "--report", s(&report)]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["success_rate"].as_f64().unwrap() <= 1.0);
    let full: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(full["cells"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("eval.json.manifest.json").exists());

    let adapt = dir.path().join("adapt.json");
    let out = ok(&["adapt", "--ckpt", s(&ckpt), "--budget", "1", "--report", s(&adapt)]);
    let line: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(line["z_max"].as_array().unwrap().len(), 2);

    let ent = dir.path().join("entropy.json");
    ok(&[
        "dataset-entropy",
        "--data",
        s(&data),
        "--max-components",
        "1",
        "--batches",
        "2",
        "--batch-size",
        "50",
        "--report",
        s(&ent),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&ent).unwrap()).unwrap();
    assert_eq!(r["components"], serde_json::json!([1, 1]));
}

#[test]
fn baselines_train_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d.bin", "5");
    let cfg = tiny_config(dir.path());
    for algo in ["awacl-vae", "awacl-vae-diayn"] {
        let run = dir.path().join(algo);
        ok(&["train", "--algo", algo, "--data", s(&data), "--out", s(&run), "--steps", "2", "--config", s(&cfg)]);
        assert!(run.join("ckpt.bin").exists());
    }
}

#[test]
fn zero_steps_still_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "d.bin", "6");
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--out", s(&run), "--steps", "0", "--config", s(&cfg)]);
    assert!(run.join("ckpt.bin").exists());
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap(), "");
}
