//! Tensors, reverse-mode differentiation and seeded randomness.

mod rng;
mod tape;
mod tensor;

pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::{add_row, matmul};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("invalid shape {shape:?}: every dimension must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch in {op} (node {node:?}): {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        node: Option<usize>,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("node {index} was never recorded on this tape ({len} nodes); run the forward pass first")]
    NotRecorded { index: usize, len: usize },
}
