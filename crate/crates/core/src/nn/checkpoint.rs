//! Checkpoint file pair: a JSON manifest plus a little-endian `f64` blob.
//!
//! The manifest lists every tensor's name, shape, dtype and byte offset into
//! the blob, and carries the graph description so the network can be rebuilt
//! without any other configuration. Optimizer state uses the same layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{GraphSpec, Network};
use super::optim::{OptimizerKind, OptimizerState};
use crate::error::{Error, Result};

pub const DTYPE: &str = "float64";
pub const BYTE_ORDER: &str = "little";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset of the first element within the blob.
    pub offset: u64,
    /// Length in bytes.
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub byte_order: String,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub graph: GraphSpec,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub format: String,
    pub byte_order: String,
    pub blob: String,
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn write_blob(
    manifest: &Path,
    items: impl Iterator<Item = (String, Vec<usize>, Vec<f64>)>,
) -> Result<(String, Vec<TensorEntry>)> {
    let path = blob_path(manifest);
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for (name, shape, data) in items {
        let offset = bytes.len() as u64;
        for v in &data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name,
            shape,
            dtype: DTYPE.into(),
            offset,
            nbytes: (data.len() * 8) as u64,
        });
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((name, entries))
}

fn read_entry(blob: &[u8], entry: &TensorEntry) -> Result<Vec<f64>> {
    if entry.dtype != DTYPE {
        return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", entry.name, entry.dtype)));
    }
    let count: usize = entry.shape.iter().product();
    if entry.nbytes != (count * 8) as u64 {
        return Err(Error::Checkpoint(format!("{}: size does not match shape", entry.name)));
    }
    let start = entry.offset as usize;
    let end = start + entry.nbytes as usize;
    let raw = blob
        .get(start..end)
        .ok_or_else(|| Error::Checkpoint(format!("{}: range beyond end of blob", entry.name)))?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
        .collect())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_blob(manifest: &Path, blob: &str) -> Result<Vec<u8>> {
    let path = manifest.parent().unwrap_or(Path::new("")).join(blob);
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

/// Writes `model.json`-style manifest at `path` and its blob next to it (`.bin`).
pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let items = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data().to_vec()));
    let (blob, tensors) = write_blob(path, items)?;
    let manifest = ModelManifest {
        format: "adaloss-model/1".into(),
        byte_order: BYTE_ORDER.into(),
        blob,
        graph: net.spec(),
        tensors,
    };
    write_json(path, &manifest)
}

pub fn load_network(path: &Path) -> Result<Network> {
    let manifest: ModelManifest = read_json(path)?;
    if manifest.byte_order != BYTE_ORDER {
        return Err(Error::Checkpoint(format!("unsupported byte order {}", manifest.byte_order)));
    }
    let blob = read_blob(path, &manifest.blob)?;
    let mut net = Network::from_spec(&manifest.graph)?;
    for entry in &manifest.tensors {
        let values = read_entry(&blob, entry)?;
        let param = net
            .param_mut(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", entry.name)))?;
        if param.tensor.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!("{}: shape differs from graph", entry.name)));
        }
        param.tensor.data_mut().copy_from_slice(&values);
    }
    if manifest.tensors.len() != net.params().len() {
        return Err(Error::Checkpoint("manifest does not cover every parameter".into()));
    }
    Ok(net)
}

pub fn save_optimizer(opt: &OptimizerState, path: &Path) -> Result<()> {
    let items = opt
        .first
        .iter()
        .enumerate()
        .map(|(i, b)| (format!("first.{i}"), vec![b.len()], b.clone()))
        .chain(
            opt.second
                .iter()
                .enumerate()
                .map(|(i, b)| (format!("second.{i}"), vec![b.len()], b.clone())),
        );
    let (blob, tensors) = write_blob(path, items)?;
    let manifest = OptimizerManifest {
        format: "adaloss-optimizer/1".into(),
        byte_order: BYTE_ORDER.into(),
        blob,
        kind: opt.kind,
        lr: opt.lr,
        step: opt.step,
        tensors,
    };
    write_json(path, &manifest)
}

pub fn load_optimizer(path: &Path) -> Result<OptimizerState> {
    let manifest: OptimizerManifest = read_json(path)?;
    let blob = read_blob(path, &manifest.blob)?;
    let mut first = Vec::new();
    let mut second = Vec::new();
    for entry in &manifest.tensors {
        let values = read_entry(&blob, entry)?;
        if entry.name.starts_with("first.") {
            first.push(values);
        } else if entry.name.starts_with("second.") {
            second.push(values);
        } else {
            return Err(Error::Checkpoint(format!("unexpected optimizer entry {}", entry.name)));
        }
    }
    Ok(OptimizerState {
        kind: manifest.kind,
        lr: manifest.lr,
        step: manifest.step,
        first,
        second,
    })
}
