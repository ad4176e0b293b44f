//! Converged sigma versus injected annotation jitter.

use serde::{Deserialize, Serialize};

use super::runlog::{RunLog, RunStatus};

/// One training run on a dataset whose target landmark carries `jitter`
/// pixels of annotation noise.
#[derive(Debug, Clone)]
pub struct JitterRun {
    pub label: String,
    pub jitter: f64,
    pub landmark: usize,
    pub log: RunLog,
    pub sigma0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterPair {
    pub label: String,
    pub jitter: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterCorrelation {
    pub pairs: Vec<JitterPair>,
    pub excluded: Vec<Exclusion>,
    /// `None` when the rank correlation is undefined (fewer than two
    /// distinct values on either side).
    pub spearman: Option<f64>,
}

/// Plateau statistics use the last `tail` epochs; a run counts as converged
/// when its sigma range there is below `tolerance · σ₀`.
pub fn annotate_sigma_vs_jitter(runs: &[JitterRun], tail: usize, tolerance: f64) -> JitterCorrelation {
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for run in runs {
        let reason = if run.log.status == RunStatus::Diverged {
            Some("diverged".to_string())
        } else if run.log.rows.len() < tail {
            Some(format!("only {} epochs logged", run.log.rows.len()))
        } else {
            match run.log.plateau_range(run.landmark, tail) {
                Some(r) if r < tolerance * run.sigma0 => None,
                Some(r) => Some(format!("sigma still moving (range {r:.4} over last {tail} epochs)")),
                None => Some("no sigma logged".to_string()),
            }
        };
        match reason {
            Some(reason) => excluded.push(Exclusion { label: run.label.clone(), reason }),
            None => pairs.push(JitterPair {
                label: run.label.clone(),
                jitter: run.jitter,
                sigma: run.log.plateau_sigma(run.landmark, tail).expect("non-empty tail"),
            }),
        }
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.jitter).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.sigma).collect();
    JitterCorrelation {
        spearman: spearman(&x, &y),
        pairs,
        excluded,
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::EpochRecord;

    fn log_with_sigmas(sigmas: &[f64]) -> RunLog {
        let mut log = RunLog::new(1);
        for (e, &s) in sigmas.iter().enumerate() {
            log.rows.push(EpochRecord {
                epoch: e,
                train_loss: 0.0,
                losses: vec![0.0],
                sigmas: vec![s],
                val_error: None,
                val_nme: None,
                val_precision: None,
                val_recall: None,
                escaped: false,
            });
        }
        log
    }

    fn run(label: &str, jitter: f64, sigma: f64) -> JitterRun {
        JitterRun {
            label: label.into(),
            jitter,
            landmark: 0,
            log: log_with_sigmas(&[16.0, 8.0, sigma, sigma, sigma]),
            sigma0: 16.0,
        }
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        // x ranks 1.5 1.5 3, y ranks 1 2 3
        let r = spearman(&[0.0, 0.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.8660254037844386).abs() < 1e-12);
        assert_eq!(spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn identical_jitter_leaves_correlation_undefined() {
        let runs = [run("a", 2.0, 1.0), run("b", 2.0, 2.0), run("c", 2.0, 3.0)];
        let c = annotate_sigma_vs_jitter(&runs, 3, 0.05);
        assert_eq!(c.pairs.len(), 3);
        assert_eq!(c.spearman, None);
    }

    #[test]
    fn diverged_run_is_excluded_with_a_note() {
        let mut bad = run("b", 2.0, 2.0);
        bad.log.status = RunStatus::Diverged;
        let runs = [run("a", 0.0, 1.0), bad, run("c", 4.0, 3.0)];
        let c = annotate_sigma_vs_jitter(&runs, 3, 0.05);
        assert_eq!(c.pairs.len(), 2);
        assert_eq!(c.excluded, vec![Exclusion { label: "b".into(), reason: "diverged".into() }]);
        assert_eq!(c.spearman, Some(1.0));
    }

    #[test]
    fn moving_sigma_is_not_converged() {
        let mut r = run("a", 0.0, 1.0);
        r.log = log_with_sigmas(&[16.0, 12.0, 8.0]);
        let c = annotate_sigma_vs_jitter(&[r], 3, 0.05);
        assert!(c.pairs.is_empty());
        assert_eq!(c.excluded.len(), 1);
    }
}
