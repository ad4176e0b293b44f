//! Adaptive target-variance curriculum for heatmap landmark localization.
//!
//! Heatmap regressors are trained against Gaussian targets whose standard
//! deviation starts wide and shrinks per landmark as the windowed variance of
//! its training loss settles. The crate bundles everything needed to run that
//! loop at desk scale:
//!
//! - [`nn`]: a small deterministic autodiff engine and U-shaped network preset
//! - [`targets`]: Gaussian target rendering
//! - [`scheduler`]: the loss-variance driven sigma update
//! - [`datagen`]: procedural landmark datasets
//! - [`decode`]: heatmap decoding and localization metrics
//! - [`ntv`]: filter smoothness
//! - [`harness`]: training runs, sweeps and analyses

pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod scheduler;
pub mod targets;
pub mod datagen;
pub mod decode;
pub mod ntv;
pub mod harness;
