//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! then sweeps the record in reverse to fill in gradients. The primitive set
//! is deliberately small: enough for feed-forward, gated convolutional and
//! recurrent networks and for return-based training objectives.

mod dropout;
mod graph;
mod params;
mod tensor;

pub use dropout::{dropout, dropout_mask, DropoutMode, SequenceMask};
pub use graph::{Graph, Var};
pub use params::{ParamStore, ParamVars};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: unsupported tensor rank for shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    BufferLength { shape: Vec<usize>, len: usize },
    #[error("slice {start}..{end} out of range for {cols} columns")]
    SliceRange {
        start: usize,
        end: usize,
        cols: usize,
    },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Logistic function, numerically stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    graph::sigmoid(x)
}
