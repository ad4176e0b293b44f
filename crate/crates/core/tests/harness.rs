//! Training-loop behaviour on tiny configurations.

use std::collections::BTreeMap;

use adaloss::datagen::SynthConfig;
use adaloss::harness::{sweep, train, RunConfig, RunStatus, SigmaMode, SweepConfig, Trainer};
use adaloss::nn::OptimizerKind;

fn tiny(name: &str, epochs: usize) -> RunConfig {
    RunConfig {
        name: name.into(),
        dataset: SynthConfig {
            height: 16,
            width: 16,
            distractors: 1,
            min_separation: 5.0,
            seed: 3,
            ..SynthConfig::default()
        },
        train_samples: 12,
        val_samples: 4,
        test_samples: 4,
        epochs,
        batch_size: 4,
        network: adaloss::harness::NetworkConfig {
            widths: [2, 4, 4],
            ..Default::default()
        },
        seed: 5,
        ..RunConfig::default()
    }
}

#[test]
fn one_epoch_run_logs_one_row_at_initial_sigma() {
    let out = train(&tiny("smoke", 1)).unwrap();
    assert_eq!(out.log.rows.len(), 1);
    assert_eq!(out.log.rows[0].sigmas, vec![4.0]);
    assert_eq!(out.final_sigmas, vec![4.0]);
    assert_eq!(out.log.status, RunStatus::Completed);
    assert!(out.test.is_some() && out.ntv.is_some());
}

#[test]
fn fixed_mode_keeps_sigma_constant() {
    let mut cfg = tiny("fixed", 6);
    cfg.mode = SigmaMode::Fixed(1.5);
    let out = train(&cfg).unwrap();
    assert!(out.log.sigma_column(0).iter().all(|&s| s == 1.5));
    assert_eq!(out.final_sigmas, vec![1.5]);
}

#[test]
fn adaloss_sigma_starts_at_quarter_resolution_and_stays_in_bounds() {
    let out = train(&tiny("ada", 8)).unwrap();
    let col = out.log.sigma_column(0);
    assert!(col[..4].iter().all(|&s| s == 4.0));
    assert!(col.iter().all(|&s| (1.0..=4.0).contains(&s)));
    if out.log.escape_events() == 0 {
        assert!(col.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn resuming_reproduces_the_remaining_epochs_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let full = train(&tiny("full", 7)).unwrap();
    full.write(&dir.path().join("full")).unwrap();

    let part = train(&tiny("full", 4)).unwrap();
    let resumed_dir = dir.path().join("resumed");
    part.write(&resumed_dir).unwrap();
    let mut trainer = Trainer::resume(tiny("full", 7), &resumed_dir).unwrap();
    trainer.run().unwrap();
    trainer.finish().unwrap().write(&resumed_dir).unwrap();

    for file in ["runlog.csv", "model.bin", "sigmas.csv"] {
        let a = std::fs::read(dir.path().join("full").join(file)).unwrap();
        let b = std::fs::read(resumed_dir.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn non_finite_loss_marks_the_run_diverged() {
    let mut cfg = tiny("blowup", 5);
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.learning_rate = 1e150;
    let out = train(&cfg).unwrap();
    assert_eq!(out.log.status, RunStatus::Diverged);
    assert!(out.log.rows.len() < 5);
    assert_eq!(out.log.diverged_at, Some(out.log.rows.len()));
    assert!(out.test.is_none());
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "DIVERGED");
}

#[test]
fn single_cell_sweep_matches_train() {
    let cfg = tiny("cell", 5);
    let direct = train(&cfg).unwrap();
    let table = sweep(
        &SweepConfig {
            base: serde_json::to_value(&cfg).unwrap(),
            axes: BTreeMap::new(),
            cells: vec![serde_json::json!({})],
        },
        None,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].log.as_ref().unwrap().rows, direct.log.rows);
}

#[test]
fn sweep_over_modes_and_learning_rates_has_eight_rows() {
    let mut base = tiny("grid", 1);
    base.train_samples = 4;
    base.val_samples = 2;
    base.test_samples = 0;
    let mut axes = BTreeMap::new();
    axes.insert(
        "mode".to_string(),
        vec![
            serde_json::json!({"fixed": 1.0}),
            serde_json::json!({"fixed": 4.0}),
            serde_json::json!({"fixed": 16.0}),
            serde_json::json!("adaloss"),
        ],
    );
    axes.insert("learning_rate".to_string(), vec![serde_json::json!(1e-3), serde_json::json!(1e-4)]);
    let dir = tempfile::tempdir().unwrap();
    let table = sweep(
        &SweepConfig {
            base: serde_json::to_value(&base).unwrap(),
            axes,
            cells: Vec::new(),
        },
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(table.rows.len(), 8);
    assert!(table.rows.iter().all(|r| r.status == Some(RunStatus::Completed)));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(dir.path().join("cell_007").join("runlog.csv").exists());
}

#[test]
fn multi_instance_runs_report_precision_and_recall() {
    let mut cfg = tiny("multi", 2);
    cfg.dataset.instances = (1, 2);
    cfg.dataset.height = 32;
    cfg.dataset.width = 32;
    let out = train(&cfg).unwrap();
    let row = &out.log.rows[1];
    assert!(row.val_precision.is_some() && row.val_recall.is_some());
    assert!(row.val_nme.is_none());
}
