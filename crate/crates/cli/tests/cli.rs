//! End-to-end runs of the `adaloss` binary.

use std::path::Path;
use std::process::Command;

fn adaloss() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adaloss"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

const TINY: &str = r#"{
  "name": "tiny",
  "dataset": {"height": 16, "width": 16, "distractors": 1, "min_separation": 5.0, "seed": 2},
  "train_samples": 8, "val_samples": 4, "test_samples": 4,
  "epochs": 3, "batch_size": 4,
  "network": {"widths": [2, 4, 4]},
  "seed": 1
}"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn train_writes_every_output_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", TINY);
    for run in ["a", "b"] {
        let status = adaloss()
            .args(["train", cfg.to_str().unwrap(), "--out"])
            .arg(dir.path().join(run))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["runlog.csv", "summary.json", "model.json", "model.bin", "sigmas.csv"] {
        assert!(dir.path().join("a").join(file).exists(), "{file}");
    }
    let a = std::fs::read(dir.path().join("a/runlog.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/runlog.csv")).unwrap();
    assert_eq!(a, b);

    let out = adaloss()
        .args(["ntv"])
        .arg(dir.path().join("a/model.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("all layers"));
}

#[test]
fn gen_data_then_eval_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", TINY);
    let data = dir.path().join("data");
    assert!(adaloss().args(["gen-data", cfg.to_str().unwrap(), "--out"]).arg(&data).status().unwrap().success());
    assert!(data.join("test/index.json").exists());
    let run = dir.path().join("run");
    assert!(adaloss().args(["train", cfg.to_str().unwrap(), "--out"]).arg(&run).status().unwrap().success());
    let out = adaloss()
        .arg("eval")
        .arg(run.join("model.json"))
        .arg(data.join("test"))
        .arg("--out")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean_distance"));
    assert!(dir.path().join("eval/metrics.json").exists());
}

#[test]
fn replay_maps_loss_columns_to_sigma_columns() {
    let dir = tempfile::tempdir().unwrap();
    let losses = write(
        dir.path(),
        "losses.csv",
        "epoch,landmark_0\n0,1.0\n1,0.5\n2,0.25\n3,0.125\n4,0.0625\n5,0.03125\n",
    );
    let status = adaloss()
        .args(["replay", losses.to_str().unwrap(), "--sigma0", "64", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.path().join("sigmas.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,sigma_0");
    assert_eq!(lines[4], "3,64");
    // halving losses: step ρ(1 − 4) = −2.7
    let s: f64 = lines[5].split(',').nth(1).unwrap().parse().unwrap();
    assert!((s - 61.3).abs() < 1e-12);
}

#[test]
fn diverged_run_exits_zero_and_says_so() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("\"seed\": 1", "\"seed\": 1, \"optimizer\": {\"kind\": \"sgd\"}, \"learning_rate\": 1e150");
    let cfg = write(dir.path(), "cfg.json", &text);
    let status = adaloss().args(["train", cfg.to_str().unwrap(), "--out"]).arg(dir.path().join("r")).status().unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(dir.path().join("r/summary.json")).unwrap();
    assert!(summary.contains("\"DIVERGED\""));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"epochs": 0}"#);
    assert!(!adaloss().args(["train", bad.to_str().unwrap(), "--out"]).arg(dir.path()).status().unwrap().success());
    let garbage = write(dir.path(), "garbage.json", "not json");
    assert!(!adaloss().args(["train", garbage.to_str().unwrap(), "--out"]).arg(dir.path()).status().unwrap().success());
    assert!(!adaloss().args(["replay", "/nonexistent/losses.csv", "--out"]).arg(dir.path()).status().unwrap().success());
    assert!(!adaloss().args(["train", "/nonexistent/cfg.json"]).status().unwrap().success());
}

#[test]
fn sweep_runs_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = format!(
        r#"{{"base": {TINY}, "axes": {{"mode": [{{"fixed": 1.0}}, "adaloss"]}}}}"#
    );
    let cfg = write(dir.path(), "sweep.json", &sweep);
    let out = adaloss().args(["sweep", cfg.to_str().unwrap(), "--out"]).arg(dir.path().join("s")).output().unwrap();
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}
