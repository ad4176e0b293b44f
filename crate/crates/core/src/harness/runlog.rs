//! Per-epoch training record and its CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::LossTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub losses: Vec<f64>,
    /// Sigma used while training this epoch.
    pub sigmas: Vec<f64>,
    pub val_error: Option<f64>,
    pub val_nme: Option<f64>,
    pub val_precision: Option<f64>,
    pub val_recall: Option<f64>,
    /// The scheduler update after this epoch let a sigma increase through.
    pub escaped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub landmarks: usize,
    pub rows: Vec<EpochRecord>,
    pub status: RunStatus,
    /// Epoch during which a non-finite loss appeared.
    pub diverged_at: Option<usize>,
    pub epoch_wall_seconds: Vec<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::invalid(format!("bad number `{field}` in run log")))
}

impl RunLog {
    pub fn new(landmarks: usize) -> Self {
        Self {
            landmarks,
            rows: Vec::new(),
            status: RunStatus::Completed,
            diverged_at: None,
            epoch_wall_seconds: Vec::new(),
        }
    }

    pub fn sigma_column(&self, landmark: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigmas[landmark]).collect()
    }

    pub fn loss_table(&self) -> LossTable {
        LossTable {
            epochs: self.rows.iter().map(|r| r.epoch).collect(),
            losses: self.rows.iter().map(|r| r.losses.clone()).collect(),
        }
    }

    pub fn final_val_error(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.val_error)
    }

    pub fn best_val_error(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.val_error).min_by(f64::total_cmp)
    }

    /// First epoch whose validation error is at or below `threshold`.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.val_error.is_some_and(|e| e <= threshold))
            .map(|r| r.epoch)
    }

    pub fn escape_events(&self) -> usize {
        self.rows.iter().filter(|r| r.escaped).count()
    }

    /// Mean sigma of `landmark` over the last `k` epochs.
    pub fn plateau_sigma(&self, landmark: usize, k: usize) -> Option<f64> {
        let col = self.sigma_column(landmark);
        let tail = &col[col.len().saturating_sub(k)..];
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Max minus min sigma of `landmark` over the last `k` epochs.
    pub fn plateau_range(&self, landmark: usize, k: usize) -> Option<f64> {
        let col = self.sigma_column(landmark);
        let tail = &col[col.len().saturating_sub(k)..];
        let max = tail.iter().copied().reduce(f64::max)?;
        let min = tail.iter().copied().reduce(f64::min)?;
        Some(max - min)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["epoch".to_string(), "train_loss".to_string()];
        h.extend((0..self.landmarks).map(|l| format!("loss_{l}")));
        h.extend((0..self.landmarks).map(|l| format!("sigma_{l}")));
        h.extend(
            ["val_error", "val_nme", "val_precision", "val_recall", "escaped"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    /// Writes `runlog.csv`. Wall-clock timings are excluded so that identical
    /// runs produce identical files.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.epoch.to_string(), r.train_loss.to_string()];
            rec.extend(r.losses.iter().map(|v| v.to_string()));
            rec.extend(r.sigmas.iter().map(|v| v.to_string()));
            rec.extend([
                opt(r.val_error),
                opt(r.val_nme),
                opt(r.val_precision),
                opt(r.val_recall),
                u8::from(r.escaped).to_string(),
            ]);
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("runlog.csv", e))?;
        Ok(())
    }

    /// Parses rows written by [`RunLog::write_csv`]; status and timings are not part of the CSV.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let landmarks = headers.iter().filter(|h| h.starts_with("loss_")).count();
        if headers.len() != 2 + 2 * landmarks + 5 {
            return Err(Error::invalid("run log header has an unexpected layout"));
        }
        let mut log = RunLog::new(landmarks);
        for record in rdr.records() {
            let rec = record?;
            let f: Vec<&str> = rec.iter().collect();
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::invalid(format!("bad number `{s}` in run log")))
            };
            let tail = 2 + 2 * landmarks;
            log.rows.push(EpochRecord {
                epoch: f[0]
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad epoch `{}`", f[0])))?,
                train_loss: num(f[1])?,
                losses: f[2..2 + landmarks].iter().map(|s| num(s)).collect::<Result<_>>()?,
                sigmas: f[2 + landmarks..tail].iter().map(|s| num(s)).collect::<Result<_>>()?,
                val_error: parse_opt(f[tail])?,
                val_nme: parse_opt(f[tail + 1])?,
                val_precision: parse_opt(f[tail + 2])?,
                val_recall: parse_opt(f[tail + 3])?,
                escaped: f[tail + 4] == "1",
            });
        }
        Ok(log)
    }
}
