//! The training loop: render targets with the current sigmas, fit MSE,
//! feed per-landmark epoch losses to the scheduler, validate.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SigmaMode};
use super::runlog::{EpochRecord, RunLog, RunStatus};
use crate::datagen::{generate_split, Sample, Split};
use crate::decode::{
    argmax_decode, evaluate_multi, evaluate_single, multi_decode, Channel, DecodeConfig,
    MetricReport,
};
use crate::error::{Error, Result};
use crate::nn::{
    load_network, load_optimizer, mse_loss_grad, mse_loss_per_channel, save_network,
    save_optimizer, Network, OptimizerState, Tensor,
};
use crate::ntv::{ntv_network, NtvReport};
use crate::scheduler::{Scheduler, SigmaTrajectory};
use crate::targets::{render_into, LandmarkSet, TargetSpec};

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Datasets {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            train: generate_split(&cfg.dataset, Split::Train, cfg.train_samples)?,
            val: generate_split(&cfg.dataset, Split::Validation, cfg.val_samples)?,
            test: if cfg.test_samples > 0 {
                generate_split(&cfg.dataset, Split::Test, cfg.test_samples)?
            } else {
                Vec::new()
            },
        })
    }
}

/// Everything a finished (or diverged) run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub log: RunLog,
    pub network: Network,
    pub optimizer: OptimizerState,
    /// Sigmas after the final scheduler update.
    pub final_sigmas: Vec<f64>,
    pub test: Option<MetricReport>,
    pub ntv: Option<NtvReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub status: RunStatus,
    pub diverged_at: Option<usize>,
    pub epochs_completed: usize,
    pub final_val_error: Option<f64>,
    pub best_val_error: Option<f64>,
    pub epochs_to_target: Option<usize>,
    pub final_sigmas: Vec<f64>,
    pub escape_events: usize,
    pub test: Option<MetricReport>,
    pub ntv: Option<NtvReport>,
    pub epoch_wall_seconds: Vec<f64>,
    pub config: RunConfig,
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            name: self.config.name.clone(),
            status: self.log.status,
            diverged_at: self.log.diverged_at,
            epochs_completed: self.log.rows.len(),
            final_val_error: self.log.final_val_error(),
            best_val_error: self.log.best_val_error(),
            epochs_to_target: self.log.epochs_to(self.config.target_error),
            final_sigmas: self.final_sigmas.clone(),
            escape_events: self.log.escape_events(),
            test: self.test.clone(),
            ntv: self.ntv.clone(),
            epoch_wall_seconds: self.log.epoch_wall_seconds.clone(),
            config: self.config.clone(),
        }
    }

    /// Writes `runlog.csv`, `sigmas.csv`, `summary.json`, `model.json/bin`
    /// and `optimizer.json/bin` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let runlog = dir.join("runlog.csv");
        let file = fs::File::create(&runlog).map_err(|e| Error::io(&runlog, e))?;
        self.log.write_csv(file)?;

        let sigmas = dir.join("sigmas.csv");
        let trajectory = SigmaTrajectory {
            epochs: self.log.rows.iter().map(|r| r.epoch).collect(),
            sigmas: self.log.rows.iter().map(|r| r.sigmas.clone()).collect(),
            next: self.final_sigmas.clone(),
            escape_epochs: self.log.rows.iter().filter(|r| r.escaped).map(|r| r.epoch).collect(),
        };
        let file = fs::File::create(&sigmas).map_err(|e| Error::io(&sigmas, e))?;
        trajectory.write_csv(file)?;

        let summary = dir.join("summary.json");
        fs::write(&summary, serde_json::to_string_pretty(&self.summary())?)
            .map_err(|e| Error::io(&summary, e))?;
        save_network(&self.network, &dir.join("model.json"))?;
        save_optimizer(&self.optimizer, &dir.join("optimizer.json"))
    }
}

/// Single mutable training context.
pub struct Trainer {
    cfg: RunConfig,
    data: Datasets,
    net: Network,
    opt: OptimizerState,
    spec: TargetSpec,
    scheduler: Option<Scheduler>,
    log: RunLog,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let data = Datasets::generate(&cfg)?;
        Self::with_data(cfg, data)
    }

    pub fn with_data(cfg: RunConfig, data: Datasets) -> Result<Self> {
        cfg.validate()?;
        let net = cfg.unet().build()?;
        let opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &net);
        let l = cfg.landmarks();
        let spec = match cfg.mode {
            SigmaMode::Adaloss => {
                TargetSpec::initial(l, cfg.dataset.height, cfg.dataset.width, cfg.normalize())
            }
            SigmaMode::Fixed(s) => TargetSpec {
                sigmas: vec![s; l],
                height: cfg.dataset.height,
                width: cfg.dataset.width,
                normalize_by_mean: cfg.normalize(),
            },
        };
        let scheduler = match cfg.mode {
            SigmaMode::Adaloss => Some(Scheduler::new(&spec, cfg.scheduler.clone())?),
            SigmaMode::Fixed(_) => None,
        };
        Ok(Self {
            log: RunLog::new(l),
            cfg,
            data,
            net,
            opt,
            spec,
            scheduler,
        })
    }

    /// Continues a run from the files written by [`RunOutput::write`].
    ///
    /// Network and optimizer come from the checkpoint; scheduler state is
    /// rebuilt by replaying the logged per-landmark losses.
    pub fn resume(cfg: RunConfig, dir: &Path) -> Result<Self> {
        let mut trainer = Self::new(cfg)?;
        trainer.net = load_network(&dir.join("model.json"))?;
        trainer.opt = load_optimizer(&dir.join("optimizer.json"))?;
        let path = dir.join("runlog.csv");
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let log = RunLog::read_csv(file)?;
        for row in &log.rows {
            if row.sigmas != trainer.spec.sigmas {
                return Err(Error::invalid(format!(
                    "run log sigma at epoch {} disagrees with the replayed schedule",
                    row.epoch
                )));
            }
            if let Some(s) = trainer.scheduler.as_mut() {
                s.observe(&mut trainer.spec, &row.losses)?;
            }
        }
        trainer.log.rows = log.rows;
        Ok(trainer)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.spec.sigmas
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    fn batch_tensors(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let (h, w) = (self.cfg.dataset.height, self.cfg.dataset.width);
        let l = self.cfg.landmarks();
        let images: Vec<&Tensor> = idx.iter().map(|&i| &self.data.train[i].image).collect();
        let x = Tensor::stack(&images)?;
        let mut t = Tensor::zeros(&[idx.len(), l, h, w]);
        for (k, &i) in idx.iter().enumerate() {
            render_into(&self.data.train[i].annotation, &self.spec, t.outer_mut(k))?;
        }
        Ok((x, t))
    }

    /// Trains one epoch; returns per-landmark mean batch losses, or `None` on divergence.
    fn train_epoch(&mut self, epoch: usize) -> Result<Option<Vec<f64>>> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let l = self.cfg.landmarks();
        let mut sums = vec![0.0; l];
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let (x, t) = self.batch_tensors(chunk)?;
            let y = self.net.forward(&x)?;
            let losses = mse_loss_per_channel(&y, &t)?;
            if losses.iter().any(|v| !v.is_finite()) {
                return Ok(None);
            }
            let grad = mse_loss_grad(&y, &t)?;
            self.net.backward(&grad)?;
            self.opt.step(&mut self.net)?;
            for (s, v) in sums.iter_mut().zip(&losses) {
                *s += v;
            }
            batches += 1;
        }
        self.net.release_activations();
        Ok(Some(sums.into_iter().map(|s| s / batches as f64).collect()))
    }

    /// Runs epochs until the configured count is reached or training diverges.
    pub fn run(&mut self) -> Result<()> {
        let l = self.cfg.landmarks();
        for epoch in self.log.rows.len()..self.cfg.epochs {
            let start = Instant::now();
            let sigmas = self.spec.sigmas.clone();
            let Some(losses) = self.train_epoch(epoch)? else {
                self.log.status = RunStatus::Diverged;
                self.log.diverged_at = Some(epoch);
                log::warn!("{}: non-finite loss at epoch {epoch}", self.cfg.name);
                break;
            };
            let escaped = match self.scheduler.as_mut() {
                Some(s) => s.observe(&mut self.spec, &losses)?.escaped(),
                None => false,
            };
            let report = evaluate(&self.net, &self.data.val, &EvalSettings::from_config(&self.cfg))?;
            let agg = &report.aggregate;
            self.log.rows.push(EpochRecord {
                epoch,
                train_loss: losses.iter().sum::<f64>() / l as f64,
                losses,
                sigmas,
                val_error: agg.mean_distance,
                val_nme: agg.nme,
                val_precision: agg.precision,
                val_recall: agg.recall,
                escaped,
            });
            self.log.epoch_wall_seconds.push(start.elapsed().as_secs_f64());
            log::debug!(
                "{} epoch {epoch}: loss {:.6e} sigma {:?} val {:?}",
                self.cfg.name,
                self.log.rows[epoch].train_loss,
                self.log.rows[epoch].sigmas,
                agg.mean_distance
            );
        }
        Ok(())
    }

    pub fn finish(self) -> Result<RunOutput> {
        let diverged = self.log.status == RunStatus::Diverged;
        let test = if diverged || self.data.test.is_empty() {
            None
        } else {
            Some(evaluate(&self.net, &self.data.test, &EvalSettings::from_config(&self.cfg))?)
        };
        let ntv = if diverged { None } else { Some(ntv_network(&self.net)?) };
        Ok(RunOutput {
            config: self.cfg,
            log: self.log,
            network: self.net,
            optimizer: self.opt,
            final_sigmas: self.spec.sigmas,
            test,
            ntv,
        })
    }
}

/// Generates data, trains for `cfg.epochs`, and evaluates on the test split.
pub fn train(cfg: &RunConfig) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.run()?;
    trainer.finish()
}

const EVAL_BATCH: usize = 16;

/// How predicted heatmaps are turned into landmarks and scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// Median filter + NMS decoding and precision/recall instead of argmax.
    pub multi_instance: bool,
    pub decode: DecodeConfig,
    pub eye_landmarks: Option<(usize, usize)>,
}

impl EvalSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            multi_instance: cfg.dataset.is_multi_instance(),
            decode: cfg.decode.clone(),
            eye_landmarks: cfg.eye_landmarks,
        }
    }
}

/// Decodes landmarks for every sample: argmax per channel for single-instance
/// data, median filter + NMS otherwise.
pub fn predict_landmarks(net: &Network, samples: &[Sample], settings: &EvalSettings) -> Result<Vec<LandmarkSet>> {
    let [_, h, w] = net.output_shape();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let y = net.predict(&Tensor::stack(&images)?)?;
        for k in 0..chunk.len() {
            let maps = y.outer(k);
            let mut landmarks = Vec::new();
            for ch in maps.chunks_exact(h * w) {
                let channel = Channel::new(ch, h, w)?;
                if settings.multi_instance {
                    let dets = multi_decode(channel, &settings.decode)?;
                    landmarks.push(dets.into_iter().map(|d| d.point).collect());
                } else {
                    landmarks.push(vec![argmax_decode(channel)]);
                }
            }
            out.push(LandmarkSet::new(landmarks));
        }
    }
    Ok(out)
}

/// Metrics of `net` on `samples` against their jitter-free truth.
pub fn evaluate(net: &Network, samples: &[Sample], settings: &EvalSettings) -> Result<MetricReport> {
    let preds = predict_landmarks(net, samples, settings)?;
    let truth: Vec<LandmarkSet> = samples.iter().map(|s| s.truth.clone()).collect();
    if settings.multi_instance {
        evaluate_multi(&preds, &truth, settings.decode.match_radius)
    } else {
        evaluate_single(&preds, &truth, settings.eye_landmarks)
    }
}
