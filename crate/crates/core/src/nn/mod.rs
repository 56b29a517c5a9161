//! Minimal dense-network substrate.
//!
//! Everything here is 64-bit and CPU-only. Layers are stateless: a forward
//! pass returns whatever the backward pass needs, which keeps trained
//! parameter sets shareable across threads. [`Tape`] wraps that in the
//! usual stateful forward-then-backward interface.

mod adam;
mod grad;
mod layers;
mod matrix;

pub use adam::{AdamConfig, AdamState};
pub use grad::{gradient_check, gradient_check_with, Differentiable, Gradients};
pub use layers::{
    dense_backward, dense_forward, layer_norm, layer_norm_backward, relu, relu_backward,
    DenseParams, Layer, SeqCache, Sequential, Tape,
};
pub use matrix::Matrix;
pub(crate) use matrix::dot;

use thiserror::Error;

/// Default LayerNorm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("training diverged: non-finite gradient in parameter tensor {tensor}")]
    Divergence { tensor: usize },
}

impl NnError {
    pub(crate) fn dims(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        NnError::Dimension {
            op,
            lhs: format!("{}x{}", lhs.0, lhs.1),
            rhs: format!("{}x{}", rhs.0, rhs.1),
        }
    }
}
