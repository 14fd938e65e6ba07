//! Minimal dense-tensor reverse-mode differentiation core.
//!
//! Everything the learned parts of the pipeline need: a flat row-major
//! tensor, a Wengert-tape graph with analytic backward rules, the layer
//! zoo (linear/MLP/LSTM/conv1d/attention/layer-norm), the NAdam optimizer,
//! a finite-difference gradient checker, and binary parameter checkpoints.
//!
//! All math is generic over [`Scalar`]; the pipeline instantiates `f64`
//! (see the crate-root aliases).

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod linalg;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, grad_check_layer, GradCheckReport, ParamCheck};
pub use graph::{Graph, Var};
pub use layers::{
    attention_exact, nystrom_attention, AttentionPool, Conv1d, EncoderBlock, LayerInstance,
    LayerNormParams, LayerSpec, Linear, Lstm, Mlp,
};
pub use linalg::{pinv, svd_jacobi, Svd};
pub use optim::{Nadam, NadamState};
pub use params::{LrGroup, ParamId, ParamStore, Parameter};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

/// Errors surfaced by the differentiation core.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite value encountered in `{0}`")]
    NonFinite(String),
    #[error("nystrom attention: landmark count {m} exceeds sequence length {t}")]
    TooManyLandmarks { m: usize, t: usize },
    #[error("invalid hyperparameter: {0}")]
    BadHyper(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
