//! Dense layers, Swish, batch normalization, residual blocks with exact
//! reverse-mode gradients, Adam, PCA and weight checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod infer;
pub mod mlp;
pub mod pca;

use thiserror::Error;

pub use adam::AdamState;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use infer::InferenceMlp;
pub use mlp::{Activation, BnStats, ForwardCache, Mlp, MlpSpec, Mode};
pub use pca::{pca_fit, PcaBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("batch of {0} rows is too small for batch normalization in train mode")]
    BatchTooSmall(usize),
    #[error("input has {got} columns, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("PCA needs at least {k} frames, got {frames}")]
    TooFewFrames { frames: usize, k: usize },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * sigmoid(x)`.
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
