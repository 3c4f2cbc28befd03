//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass and can
//! then propagate gradients from a scalar root back into a [`ParamStore`].
//! Layers ([`Linear`], [`LstmCell`], [`BiLstm`], [`MultiHeadAttention`]) are
//! thin structs of parameter handles that emit graph operations.

mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::NumError;
pub use gradcheck::{grad_check, grad_check_against, relative_error, GradCheckReport, GradMismatch};
pub use graph::{Graph, Var};
pub use layers::{BiLstm, Embedding, Linear, LstmCell, LstmState, MultiHeadAttention};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;

pub type Result<T, E = NumError> = std::result::Result<T, E>;

/// Probability clamp used by binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Plain numerically stable softmax, used outside the graph and by tests.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NAN; xs.len()];
    }
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}
