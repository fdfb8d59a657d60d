//! Minimal dense-tensor math with reverse-mode automatic differentiation.
//!
//! The surface is deliberately small: exactly the operations the encoder,
//! the projection experts, both losses, and the optimizer need. Tensors are
//! row-major `f64`. Gradients are computed by replaying a dynamic [`Tape`]
//! in reverse construction order, which is a valid topological order because
//! every operation refers only to earlier nodes.
//!
//! Scalars are rank-0 tensors. A [`Value`] is a copyable handle into a tape;
//! tapes are single-threaded and rebuilt for every forward pass.

mod tape;
mod tensor;

pub use tape::{Tape, Value};
pub use tensor::Tensor;

use thiserror::Error;

/// Norm floor below which cosine similarity refuses to evaluate.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NumgradError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate embedding: vector norm {norm:.3e} is below {limit:.0e}")]
    DegenerateEmbedding { norm: f64, limit: f64 },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward was already run on this tape")]
    BackwardAlreadyRun,
    #[error("values belong to different tapes")]
    TapeMismatch,
}

pub type Result<T> = std::result::Result<T, NumgradError>;
