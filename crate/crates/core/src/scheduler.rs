//! Loss-variance driven sigma scheduling.
//!
//! After every epoch each landmark's loss joins a window of the last `w`
//! epoch losses. The population variance of that window, compared with the
//! previous epoch's, gives the step
//!
//! ```text
//! Δσ = ρ · (1 − V_prev / max(V_curr, ε))
//! ```
//!
//! Negative steps (settling loss) sharpen the target. Positive steps are
//! dropped unless the variance and that landmark's loss both rose. Sigma stays
//! within `[sigma_min, σ₀]`.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::TargetSpec;

/// Which loss the escape condition compares against its previous epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeGate {
    #[default]
    PerLandmark,
    TotalLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Window length `w` in epochs.
    pub window: usize,
    /// Step regularizer `ρ`.
    pub rho: f64,
    pub sigma_min: f64,
    /// Floor `ε` applied to the current variance before dividing.
    pub variance_floor: f64,
    /// Drop positive steps unless the escape condition holds.
    pub restrict_increase: bool,
    pub escape_gate: EscapeGate,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            window: 3,
            rho: 0.9,
            sigma_min: 1.0,
            variance_floor: 1e-12,
            restrict_increase: true,
            escape_gate: EscapeGate::PerLandmark,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::invalid("scheduler window must be at least 2"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::invalid("rho must be positive"));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::invalid("sigma_min must be positive"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::invalid("variance_floor must be positive"));
        }
        Ok(())
    }

    /// Epochs that must be recorded before the first update.
    pub fn warmup_epochs(&self) -> usize {
        self.window + 1
    }
}

/// Population variance of a full window.
pub fn loss_variance(window: &[f64], w: usize) -> Result<f64> {
    if window.len() < w || w == 0 {
        return Err(Error::ColdHistory {
            recorded: window.len(),
            required: w,
        });
    }
    let window = &window[window.len() - w..];
    let mean = window.iter().sum::<f64>() / w as f64;
    Ok(window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64)
}

/// Raw (unrestricted) sigma step.
pub fn delta_sigma(v_prev: f64, v_curr: f64, cfg: &SchedulerConfig) -> f64 {
    cfg.rho * (1.0 - v_prev / v_curr.max(cfg.variance_floor))
}

/// Per-landmark windowed loss record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    window: usize,
    buffers: Vec<VecDeque<f64>>,
    /// Variance stored by the last update, `V_{t-1}`.
    prev_variance: Vec<Option<f64>>,
    prev_losses: Option<Vec<f64>>,
    last_losses: Option<Vec<f64>>,
    prev_total: Option<f64>,
    /// Upper bound per landmark: the sigma in effect when the history started.
    sigma_caps: Vec<f64>,
    epochs: usize,
}

impl LossHistory {
    /// Starts an empty history whose sigma caps are `spec`'s current sigmas.
    pub fn new(spec: &TargetSpec, cfg: &SchedulerConfig) -> Self {
        let l = spec.sigmas.len();
        Self {
            window: cfg.window,
            buffers: vec![VecDeque::with_capacity(cfg.window + 1); l],
            prev_variance: vec![None; l],
            prev_losses: None,
            last_losses: None,
            prev_total: None,
            sigma_caps: spec.sigmas.clone(),
            epochs: 0,
        }
    }

    pub fn landmarks(&self) -> usize {
        self.buffers.len()
    }

    pub fn epochs_recorded(&self) -> usize {
        self.epochs
    }

    pub fn buffer(&self, landmark: usize) -> Vec<f64> {
        self.buffers[landmark].iter().copied().collect()
    }

    pub fn sigma_caps(&self) -> &[f64] {
        &self.sigma_caps
    }

    /// Current window variance per landmark, once the window is full.
    pub fn current_variance(&self, landmark: usize) -> Option<f64> {
        let buf = self.buffer(landmark);
        loss_variance(&buf, self.window).ok()
    }

    pub fn previous_variance(&self, landmark: usize) -> Option<f64> {
        self.prev_variance[landmark]
    }

    /// Appends one epoch's per-landmark losses, evicting beyond the window.
    pub fn record_epoch(&mut self, losses: &[f64]) -> Result<()> {
        if losses.len() != self.buffers.len() {
            return Err(Error::invalid(format!(
                "expected {} landmark losses, got {}",
                self.buffers.len(),
                losses.len()
            )));
        }
        if let Some((landmark, &value)) = losses
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidLoss { landmark, value });
        }
        for (buf, &loss) in self.buffers.iter_mut().zip(losses) {
            buf.push_back(loss);
            while buf.len() > self.window {
                buf.pop_front();
            }
        }
        self.prev_losses = self.last_losses.replace(losses.to_vec());
        self.epochs += 1;
        Ok(())
    }
}

/// What happened to one landmark during an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkUpdate {
    pub variance_prev: f64,
    pub variance: f64,
    pub raw_delta: f64,
    /// Step actually added, after restriction and clamping.
    pub applied_delta: f64,
    /// A positive raw step was allowed through by the escape condition.
    pub escaped: bool,
    /// A positive raw step was zeroed.
    pub restricted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UpdateStatus {
    /// Not enough epochs yet; sigmas untouched.
    WarmingUp { recorded: usize, required: usize },
    Applied(Vec<LandmarkUpdate>),
}

impl UpdateStatus {
    pub fn escaped(&self) -> bool {
        matches!(self, UpdateStatus::Applied(u) if u.iter().any(|x| x.escaped))
    }
}

/// Updates `spec.sigmas` from the history after the current epoch was recorded.
///
/// `epoch_losses` and `epoch_total_loss` are the just-finished epoch's values;
/// they are compared against the history's previous epoch for the escape
/// condition. While the history is cold this only primes `V_{t-1}`.
pub fn apply_update(
    spec: &mut TargetSpec,
    hist: &mut LossHistory,
    epoch_losses: &[f64],
    epoch_total_loss: f64,
    cfg: &SchedulerConfig,
) -> Result<UpdateStatus> {
    let l = hist.landmarks();
    if spec.sigmas.len() != l || epoch_losses.len() != l {
        return Err(Error::invalid("landmark counts of spec, history and losses differ"));
    }
    let variances: Vec<Option<f64>> = (0..l).map(|i| hist.current_variance(i)).collect();
    let prev_total = hist.prev_total.replace(epoch_total_loss);
    let warm = hist.epochs >= cfg.warmup_epochs() && hist.prev_variance.iter().all(Option::is_some);
    if !warm {
        for (slot, v) in hist.prev_variance.iter_mut().zip(&variances) {
            if v.is_some() {
                *slot = *v;
            }
        }
        return Ok(UpdateStatus::WarmingUp {
            recorded: hist.epochs,
            required: cfg.warmup_epochs(),
        });
    }

    let prev_losses = hist.prev_losses.clone().unwrap_or_default();
    let mut updates = Vec::with_capacity(l);
    for i in 0..l {
        let v_prev = hist.prev_variance[i].expect("warm history has previous variances");
        let v_curr = variances[i].expect("warm history has full windows");
        let raw = delta_sigma(v_prev, v_curr, cfg);
        let mut step = raw;
        let mut escaped = false;
        let mut restricted = false;
        if raw > 0.0 && cfg.restrict_increase {
            let loss_rose = match cfg.escape_gate {
                EscapeGate::PerLandmark => prev_losses.get(i).is_some_and(|&p| epoch_losses[i] > p),
                EscapeGate::TotalLoss => prev_total.is_some_and(|p| epoch_total_loss > p),
            };
            if v_curr > v_prev && loss_rose {
                escaped = true;
            } else {
                step = 0.0;
                restricted = true;
            }
        }
        let old = spec.sigmas[i];
        let new = (old + step).clamp(cfg.sigma_min, hist.sigma_caps[i].max(cfg.sigma_min));
        spec.sigmas[i] = new;
        hist.prev_variance[i] = Some(v_curr);
        updates.push(LandmarkUpdate {
            variance_prev: v_prev,
            variance: v_curr,
            raw_delta: raw,
            applied_delta: new - old,
            escaped,
            restricted,
        });
    }
    Ok(UpdateStatus::Applied(updates))
}

/// Stateful wrapper pairing a history with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub history: LossHistory,
}

impl Scheduler {
    pub fn new(spec: &TargetSpec, config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        let history = LossHistory::new(spec, &config);
        Ok(Self { config, history })
    }

    /// Records an epoch and applies the update; the total loss is the mean over landmarks.
    pub fn observe(&mut self, spec: &mut TargetSpec, losses: &[f64]) -> Result<UpdateStatus> {
        self.history.record_epoch(losses)?;
        let total = losses.iter().sum::<f64>() / losses.len() as f64;
        apply_update(spec, &mut self.history, losses, total, &self.config)
    }
}

/// Rectangular epoch × landmark loss table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub epochs: Vec<usize>,
    pub losses: Vec<Vec<f64>>,
}

impl LossTable {
    pub fn new(losses: Vec<Vec<f64>>) -> Result<Self> {
        let table = Self {
            epochs: (0..losses.len()).collect(),
            losses,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn landmarks(&self) -> usize {
        self.losses.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.landmarks();
        for (row, values) in self.losses.iter().enumerate() {
            if values.len() != expected {
                return Err(Error::RaggedTable {
                    row,
                    expected,
                    found: values.len(),
                });
            }
            if let Some((landmark, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::InvalidLoss { landmark, value });
            }
        }
        if self.epochs.len() != self.losses.len() {
            return Err(Error::invalid("epoch column length differs from loss rows"));
        }
        Ok(())
    }

    /// Reads `epoch,landmark_0,...` CSV.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let mut epochs = Vec::new();
        let mut losses = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let mut fields = record.iter();
            let epoch = fields
                .next()
                .and_then(|f| f.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::invalid(format!("row {row}: bad epoch field")))?;
            let values = fields
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("row {row}: bad loss value `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            epochs.push(epoch);
            losses.push(values);
        }
        let table = Self { epochs, losses };
        table.validate()?;
        Ok(table)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["epoch".to_string()];
        header.extend((0..self.landmarks()).map(|l| format!("landmark_{l}")));
        w.write_record(&header)?;
        for (epoch, row) in self.epochs.iter().zip(&self.losses) {
            let mut rec = vec![epoch.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Sigma in effect during each epoch of a replayed table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaTrajectory {
    pub epochs: Vec<usize>,
    pub sigmas: Vec<Vec<f64>>,
    /// Sigmas after the update that follows the last epoch.
    pub next: Vec<f64>,
    pub escape_epochs: Vec<usize>,
}

impl SigmaTrajectory {
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let l = self.next.len();
        let mut header = vec!["epoch".to_string()];
        header.extend((0..l).map(|i| format!("sigma_{i}")));
        w.write_record(&header)?;
        for (epoch, row) in self.epochs.iter().zip(&self.sigmas) {
            let mut rec = vec![epoch.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn column(&self, landmark: usize) -> Vec<f64> {
        self.sigmas.iter().map(|r| r[landmark]).collect()
    }
}

/// Replays a loss table through the scheduler, starting every landmark at `sigma0`.
pub fn replay(table: &LossTable, cfg: &SchedulerConfig, sigma0: f64) -> Result<SigmaTrajectory> {
    table.validate()?;
    cfg.validate()?;
    if !(sigma0 > 0.0) {
        return Err(Error::invalid("sigma0 must be positive"));
    }
    let l = table.landmarks().max(1);
    let mut spec = TargetSpec {
        sigmas: vec![sigma0; l],
        height: 1,
        width: 1,
        normalize_by_mean: false,
    };
    let mut sched = Scheduler::new(&spec, cfg.clone())?;
    let mut sigmas = Vec::with_capacity(table.losses.len());
    let mut escape_epochs = Vec::new();
    for (&epoch, row) in table.epochs.iter().zip(&table.losses) {
        sigmas.push(spec.sigmas.clone());
        if sched.observe(&mut spec, row)?.escaped() {
            escape_epochs.push(epoch);
        }
    }
    Ok(SigmaTrajectory {
        epochs: table.epochs.clone(),
        sigmas,
        next: spec.sigmas,
        escape_epochs,
    })
}
