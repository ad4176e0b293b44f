use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("parameter `{0}` has no gradient; run backward first")]
    MissingGradient(String),

    #[error("rejected loss value {value} for landmark {landmark}")]
    InvalidLoss { landmark: usize, value: f64 },

    #[error("loss history is cold: {recorded} epochs recorded, {required} required")]
    ColdHistory { recorded: usize, required: usize },

    #[error("ragged table: row {row} has {found} columns, expected {expected}")]
    RaggedTable {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("cannot place {requested} instances at {height}x{width} with minimum spacing {spacing}")]
    InfeasiblePlacement {
        requested: usize,
        height: usize,
        width: usize,
        spacing: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
