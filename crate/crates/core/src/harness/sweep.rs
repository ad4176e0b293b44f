//! Grid sweeps: a base config plus JSON overrides, one run per cell.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use super::runlog::{RunLog, RunStatus};
use super::train::train;
use crate::error::{Error, Result};

/// `base` is a full or partial [`RunConfig`]. Cells are the product of
/// `axes` (dotted key path → values), followed by any explicit `cells`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub base: Value,
    pub axes: BTreeMap<String, Vec<Value>>,
    pub cells: Vec<Value>,
}

impl SweepConfig {
    pub fn overrides(&self) -> Result<Vec<Value>> {
        let mut grid = if self.axes.is_empty() { Vec::new() } else { grid_product(&self.axes)? };
        grid.extend(self.cells.iter().cloned());
        if grid.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        Ok(grid)
    }
}

fn set_path(target: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = target;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::invalid(format!("bad sweep axis `{path}`")));
        }
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        let map = cur.as_object_mut().expect("object");
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        cur = map.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Cartesian product of the axes as nested override objects.
pub fn grid_product(axes: &BTreeMap<String, Vec<Value>>) -> Result<Vec<Value>> {
    let mut cells = vec![Value::Object(Default::default())];
    for (path, values) in axes {
        if values.is_empty() {
            return Err(Error::invalid(format!("sweep axis `{path}` has no values")));
        }
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut c = cell.clone();
                set_path(&mut c, path, v.clone())?;
                next.push(c);
            }
        }
        cells = next;
    }
    Ok(cells)
}

/// Recursive merge; objects merge key by key, anything else replaces.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn cell_label(patch: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::String(s) => out.push(format!("{prefix}={s}")),
            other => out.push(format!("{prefix}={other}")),
        }
    }
    let mut parts = Vec::new();
    walk("", patch, &mut parts);
    parts.join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub label: String,
    pub status: Option<RunStatus>,
    /// Config or IO failure of this cell; the rest of the sweep still runs.
    pub error: Option<String>,
    pub final_val_error: Option<f64>,
    pub best_val_error: Option<f64>,
    pub epochs_to_target: Option<usize>,
    pub final_sigmas: Vec<f64>,
    #[serde(skip)]
    pub log: Option<RunLog>,
}

impl SweepRow {
    pub fn diverged(&self) -> bool {
        self.status == Some(RunStatus::Diverged)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "cell",
            "label",
            "status",
            "diverged",
            "final_val_error",
            "best_val_error",
            "epochs_to_target",
            "error",
        ])?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let status = match r.status {
                Some(RunStatus::Completed) => "COMPLETED",
                Some(RunStatus::Diverged) => "DIVERGED",
                None => "FAILED",
            };
            w.write_record([
                r.cell.to_string(),
                r.label.clone(),
                status.to_string(),
                u8::from(r.diverged()).to_string(),
                num(r.final_val_error),
                num(r.best_val_error),
                r.epochs_to_target.map(|e| e.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("sweep.csv", e))?;
        Ok(())
    }
}

fn run_cell(base: &Value, patch: &Value, name: &str, out: Option<&Path>) -> Result<RunLog> {
    let mut merged = base.clone();
    merge(&mut merged, patch);
    let mut cfg: RunConfig = serde_json::from_value(merged)?;
    cfg.name = name.to_string();
    let output = train(&cfg)?;
    if let Some(dir) = out {
        output.write(&dir.join(name))?;
    }
    Ok(output.log)
}

/// Runs every cell in order. Per-cell errors are recorded in the table.
/// With `out`, each cell writes its files into `out/cell_NNN` and the table
/// goes to `out/sweep.csv`.
pub fn sweep(cfg: &SweepConfig, out: Option<&Path>) -> Result<SweepTable> {
    let grid = cfg.overrides()?;
    let mut table = SweepTable::default();
    for (i, patch) in grid.iter().enumerate() {
        let name = format!("cell_{i:03}");
        let label = cell_label(patch);
        let row = match run_cell(&cfg.base, patch, &name, out) {
            Ok(log) => {
                let target = serde_json::from_value::<RunConfig>({
                    let mut m = cfg.base.clone();
                    merge(&mut m, patch);
                    m
                })
                .map(|c| c.target_error)
                .unwrap_or(2.0);
                SweepRow {
                    cell: i,
                    label,
                    status: Some(log.status),
                    error: None,
                    final_val_error: log.final_val_error(),
                    best_val_error: log.best_val_error(),
                    epochs_to_target: log.epochs_to(target),
                    final_sigmas: log.rows.last().map(|r| r.sigmas.clone()).unwrap_or_default(),
                    log: Some(log),
                }
            }
            Err(e) => {
                log::warn!("sweep cell {i} ({label}) failed: {e}");
                SweepRow {
                    cell: i,
                    label,
                    status: None,
                    error: Some(e.to_string()),
                    final_val_error: None,
                    best_val_error: None,
                    epochs_to_target: None,
                    final_sigmas: Vec::new(),
                    log: None,
                }
            }
        };
        table.rows.push(row);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("sweep.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        table.write_csv(file)?;
    }
    Ok(table)
}
