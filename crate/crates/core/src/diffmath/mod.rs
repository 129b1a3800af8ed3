//! Dense `f64` matrices, a recording graph for reverse-mode gradients and
//! an Adam optimizer. Shared by the detector and the generator policy.

mod adam;
pub mod gradcheck;
mod graph;
mod sparse;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use sparse::SparseMatrix;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a 1x1 value, got {shape:?}")]
    NonScalar { shape: (usize, usize) },
    #[error("graph was already differentiated")]
    AlreadyBackpropagated,
    #[error("{op}: index {index} out of bounds for {bound}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}
