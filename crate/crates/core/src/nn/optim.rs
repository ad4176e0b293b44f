//! First-order optimizers over a network's parameter registry.

use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "defaults::beta1")]
        beta1: f64,
        #[serde(default = "defaults::beta2")]
        beta2: f64,
        #[serde(default = "defaults::adam_eps")]
        eps: f64,
    },
    /// `lr` scales the Adadelta step; 1.0 is the unscaled rule.
    Adadelta {
        #[serde(default = "defaults::rho")]
        rho: f64,
        #[serde(default = "defaults::adadelta_eps")]
        eps: f64,
    },
}

mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_eps() -> f64 {
        1e-8
    }
    pub fn rho() -> f64 {
        0.9
    }
    pub fn adadelta_eps() -> f64 {
        1e-6
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::adam_eps(),
        }
    }

    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta {
            rho: defaults::rho(),
            eps: defaults::adadelta_eps(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Adadelta { .. } => "adadelta",
        }
    }
}

/// Optimizer with per-parameter moment buffers.
///
/// For Adam the two buffers hold the first and second moments; for Adadelta
/// the running averages of squared gradients and squared updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Network) -> Self {
        let buffers = || -> Vec<Vec<f64>> {
            match kind {
                OptimizerKind::Sgd => Vec::new(),
                _ => net.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            }
        };
        Self {
            kind,
            lr,
            step: 0,
            first: buffers(),
            second: buffers(),
        }
    }

    /// Applies one update from the gradients left by `Network::backward`.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if let Some(p) = net.params().iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        if !matches!(self.kind, OptimizerKind::Sgd) {
            let lens: Vec<usize> = net.params().iter().map(|p| p.tensor.len()).collect();
            let ok = self.first.len() == lens.len()
                && self.first.iter().zip(&lens).all(|(b, &l)| b.len() == l);
            if !ok {
                return Err(Error::invalid("optimizer buffers do not match the network"));
            }
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in net.params_mut() {
                    let (data, grad) = p.tensor.data_and_grad();
                    let grad = grad.unwrap_or_default();
                    for (w, g) in data.iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, m), v) in net.params_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let (data, grad) = p.tensor.data_and_grad();
                    let grad = grad.unwrap_or_default();
                    for (((w, &g), m), v) in data.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adadelta { rho, eps } => {
                for ((p, sq_grad), sq_delta) in
                    net.params_mut().iter_mut().zip(&mut self.first).zip(&mut self.second)
                {
                    let (data, grad) = p.tensor.data_and_grad();
                    let grad = grad.unwrap_or_default();
                    for (((w, &g), eg), ed) in
                        data.iter_mut().zip(grad).zip(sq_grad.iter_mut()).zip(sq_delta.iter_mut())
                    {
                        *eg = rho * *eg + (1.0 - rho) * g * g;
                        let delta = (*ed + eps).sqrt() / (*eg + eps).sqrt() * g;
                        *ed = rho * *ed + (1.0 - rho) * delta * delta;
                        *w -= lr * delta;
                    }
                }
            }
        }
        Ok(())
    }
}
