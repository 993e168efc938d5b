//! Minimal batched reverse-mode network engine.
//!
//! Five layer kinds (dense, conv2d, maxpool2d, batchnorm, activation) plus a
//! free reshape, composed sequentially. Tensors carry a leading batch axis;
//! per-layer caches recorded during a train-mode forward pass drive the exact
//! reverse pass. Everything is 64-bit.

mod gradcheck;
mod layers;
mod loss;
mod network;
mod optimizer;

pub use gradcheck::{grad_check, grad_check_detailed, GradCheckReport};
pub use layers::{
    activation_apply, batchnorm_apply, conv2d_forward, dense_forward, maxpool2d_forward,
    Activation, LayerSpec, BN_EPS, BN_MOMENTUM,
};
pub use loss::{
    cross_entropy_loss, mean_cross_entropy, mean_intensity_penalty, weight_penalty,
};
pub use network::{ForwardTrace, Mode, Network, NetworkParams};
pub use optimizer::{optimizer_step, Algorithm, OptimizerState};

use crate::tensor::Tensor;

/// Parameter group of one layer, in a fixed per-kind order:
/// dense `[W, b]`, conv2d `[W, b]`, batchnorm `[gamma, beta, run_mean, run_var]`,
/// everything else empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub tensors: Vec<Tensor>,
}

impl LayerParams {
    pub fn empty() -> Self {
        LayerParams { tensors: Vec::new() }
    }

    /// Zero-filled clone with matching shapes (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }
}
