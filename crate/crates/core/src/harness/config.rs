//! Run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::SynthConfig;
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, UNetConfig};
use crate::scheduler::SchedulerConfig;
use crate::targets::initial_sigma;

/// How target sigmas evolve over the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Adaloss,
    /// Constant sigma for every landmark.
    Fixed(f64),
}

impl SigmaMode {
    pub fn label(&self) -> String {
        match self {
            SigmaMode::Adaloss => "adaloss".into(),
            SigmaMode::Fixed(s) => format!("fixed_{s}"),
        }
    }
}

/// Network hyperparameters; channel counts and resolution come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub widths: [usize; 3],
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let d = UNetConfig::default();
        Self {
            widths: d.widths,
            kernel: d.kernel,
            leaky_slope: d.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub name: String,
    pub dataset: SynthConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub network: NetworkConfig,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: SigmaMode,
    pub scheduler: SchedulerConfig,
    pub decode: DecodeConfig,
    /// Divide each target channel by its mean; defaults to on for
    /// multi-landmark single-instance datasets.
    pub normalize_by_mean: Option<bool>,
    /// Landmark indices used as the inter-ocular pair for NME.
    pub eye_landmarks: Option<(usize, usize)>,
    /// Validation error (pixels) used for epochs-to-threshold.
    pub target_error: f64,
    /// Seeds network initialization and batch order.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            dataset: SynthConfig::default(),
            train_samples: 2000,
            val_samples: 200,
            test_samples: 200,
            network: NetworkConfig::default(),
            optimizer: OptimizerKind::adam(),
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 8,
            mode: SigmaMode::Adaloss,
            scheduler: SchedulerConfig::default(),
            decode: DecodeConfig::default(),
            normalize_by_mean: None,
            eye_landmarks: None,
            target_error: 2.0,
            seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.scheduler.validate()?;
        self.decode.validate()?;
        self.unet().validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.train_samples == 0 || self.val_samples == 0 {
            return Err(Error::invalid("batch size and split sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if let SigmaMode::Fixed(s) = self.mode {
            if !(s > 0.0) {
                return Err(Error::invalid("fixed sigma must be positive"));
            }
        }
        if let Some((a, b)) = self.eye_landmarks {
            let l = self.dataset.landmarks.len();
            if a >= l || b >= l || a == b {
                return Err(Error::invalid("eye landmark indices are invalid"));
            }
        }
        Ok(())
    }

    pub fn landmarks(&self) -> usize {
        self.dataset.landmarks.len()
    }

    pub fn normalize(&self) -> bool {
        self.normalize_by_mean
            .unwrap_or(self.landmarks() > 1 && !self.dataset.is_multi_instance())
    }

    pub fn sigma0(&self) -> f64 {
        initial_sigma(self.dataset.height, self.dataset.width)
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            landmarks: self.landmarks(),
            height: self.dataset.height,
            width: self.dataset.width,
            widths: self.network.widths,
            kernel: self.network.kernel,
            leaky_slope: self.network.leaky_slope,
            seed: self.seed,
        }
    }
}
