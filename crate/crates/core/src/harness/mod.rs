//! Experiment orchestration: single runs, sweeps and post-hoc analyses.

mod analysis;
mod config;
mod runlog;
mod sweep;
mod train;

pub use analysis::{annotate_sigma_vs_jitter, spearman, Exclusion, JitterCorrelation, JitterPair, JitterRun};
pub use config::{NetworkConfig, RunConfig, SigmaMode};
pub use runlog::{EpochRecord, RunLog, RunStatus};
pub use sweep::{grid_product, sweep, SweepConfig, SweepRow, SweepTable};
pub use train::{evaluate, predict_landmarks, train, Datasets, EvalSettings, RunOutput, RunSummary, Trainer};
