//! Minimal reverse-mode autodiff engine: tensors, a layer graph, MSE loss,
//! optimizers and checkpoints.

pub mod checkpoint;
mod kernels;
pub mod loss;
pub mod network;
pub mod optim;
pub mod preset;
pub mod tensor;

pub use checkpoint::{load_network, load_optimizer, save_network, save_optimizer};
pub use loss::{mse_loss_grad, mse_loss_per_channel};
pub use network::{GraphBuilder, GraphSpec, Network, NodeId, Op};
pub use optim::{OptimizerKind, OptimizerState};
pub use preset::UNetConfig;
pub use tensor::Tensor;
