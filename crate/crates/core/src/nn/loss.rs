//! Mean squared error split per output channel.

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check_pair(pred: &Tensor, target: &Tensor) -> Result<(usize, usize, usize)> {
    target.check_shape(pred.shape())?;
    match pred.shape() {
        [n, l, h, w] => Ok((*n, *l, h * w)),
        other => Err(Error::invalid(format!(
            "expected (N, L, H, W) heatmaps, got shape {other:?}"
        ))),
    }
}

/// Per-channel MSE: element `l` averages squared differences over the batch and
/// the pixels of channel `l`. The total loss is the mean of these values.
pub fn mse_loss_per_channel(pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    let (n, l, hw) = check_pair(pred, target)?;
    let mut sums = vec![0.0; l];
    for (i, (p, t)) in pred.data().chunks_exact(hw).zip(target.data().chunks_exact(hw)).enumerate() {
        sums[i % l] += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let count = (n * hw) as f64;
    Ok(sums.into_iter().map(|s| s / count).collect())
}

/// Gradient of the total loss (mean over channels of [`mse_loss_per_channel`]) w.r.t. `pred`.
pub fn mse_loss_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(pred, target)?;
    let scale = 2.0 / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Tensor::from_vec(pred.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_zero_loss() {
        let t = Tensor::full(&[2, 3, 2, 2], 0.7);
        assert_eq!(mse_loss_per_channel(&t, &t).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn constant_offset_gives_unit_loss() {
        let t = Tensor::full(&[2, 2, 3, 3], -0.2);
        let p = Tensor::full(&[2, 2, 3, 3], 0.8);
        for v in mse_loss_per_channel(&p, &t).unwrap() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::zeros(&[1, 2, 2, 2]);
        let b = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(mse_loss_per_channel(&a, &b).is_err());
        assert!(mse_loss_grad(&a, &b).is_err());
    }
}
