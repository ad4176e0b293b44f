//! Normalized total variation of convolution filters.
//!
//! For a 2-D filter `K` the score is the sum of absolute forward differences
//! along rows and columns divided by the sum of absolute values:
//!
//! ```text
//! NTV(K) = (Σ|K[i+1,j] − K[i,j]| + Σ|K[i,j+1] − K[i,j]|) / Σ|K[i,j]|
//! ```
//!
//! A convolution weight of shape `(C_out, C_in, k, k)` contributes
//! `C_out · C_in` filters. Single-element (1×1) filters carry no spatial
//! variation and are left out of network aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterNtv {
    pub value: f64,
    /// The filter was all zeros; `value` is reported as 0.
    pub degenerate: bool,
}

pub fn ntv_filter(kernel: &[f64], rows: usize, cols: usize) -> Result<FilterNtv> {
    if kernel.len() != rows * cols || kernel.len() < 2 {
        return Err(Error::invalid(format!(
            "kernel of {} values cannot be a {rows}x{cols} filter with at least two taps",
            kernel.len()
        )));
    }
    let l1: f64 = kernel.iter().map(|v| v.abs()).sum();
    if l1 == 0.0 {
        return Ok(FilterNtv {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut tv = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let v = kernel[r * cols + c];
            if r + 1 < rows {
                tv += (kernel[(r + 1) * cols + c] - v).abs();
            }
            if c + 1 < cols {
                tv += (kernel[r * cols + c + 1] - v).abs();
            }
        }
    }
    Ok(FilterNtv {
        value: tv / l1,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNtv {
    pub name: String,
    pub filters: usize,
    pub mean: f64,
    pub degenerate_filters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtvReport {
    pub layers: Vec<LayerNtv>,
    /// Mean over every filter of every included layer.
    pub all: f64,
    /// Mean over the filters of the last included layer.
    pub last: f64,
}

/// Filter NTVs of one `(C_out, C_in, k, k)` weight, in storage order.
pub fn ntv_weight(shape: &[usize], data: &[f64]) -> Result<Vec<FilterNtv>> {
    let [_, _, kh, kw] = shape else {
        return Err(Error::invalid(format!("expected a 4-D weight, got {shape:?}")));
    };
    data.chunks_exact(kh * kw)
        .map(|k| ntv_filter(k, *kh, *kw))
        .collect()
}

pub fn ntv_network(net: &Network) -> Result<NtvReport> {
    let mut layers = Vec::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for param in net.conv_weights() {
        let shape = param.tensor.shape();
        if shape.len() != 4 || shape[2] * shape[3] < 2 {
            continue;
        }
        let values = ntv_weight(shape, param.tensor.data())?;
        let sum: f64 = values.iter().map(|f| f.value).sum();
        total += sum;
        count += values.len();
        layers.push(LayerNtv {
            name: param.name.trim_end_matches(".weight").to_string(),
            filters: values.len(),
            mean: sum / values.len() as f64,
            degenerate_filters: values.iter().filter(|f| f.degenerate).count(),
        });
    }
    let last = layers.last().map_or(0.0, |l| l.mean);
    Ok(NtvReport {
        all: if count == 0 { 0.0 } else { total / count as f64 },
        last,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_kernel_is_zero() {
        let v = ntv_filter(&[0.3; 9], 3, 3).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(!v.degenerate);
    }

    #[test]
    fn alternating_row_kernel() {
        let v = ntv_filter(&[1.0, -1.0, 1.0], 1, 3).unwrap();
        assert!((v.value - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_kernel_is_flagged() {
        let v = ntv_filter(&[0.0; 4], 2, 2).unwrap();
        assert!(v.degenerate);
        assert_eq!(v.value, 0.0);
        assert!(ntv_filter(&[1.0], 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn scale_invariant(k in proptest::collection::vec(-5.0f64..5.0, 9), a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]) {
            prop_assume!(k.iter().any(|v| v.abs() > 1e-6));
            let base = ntv_filter(&k, 3, 3).unwrap().value;
            let scaled: Vec<f64> = k.iter().map(|v| v * a).collect();
            let s = ntv_filter(&scaled, 3, 3).unwrap().value;
            prop_assert!((base - s).abs() <= 1e-12 * base.max(1.0));
            prop_assert!(base >= 0.0);
        }
    }
}
