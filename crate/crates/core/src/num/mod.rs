//! Dense-tensor arithmetic with reverse-mode automatic differentiation.
//!
//! This is the sole numerical substrate for the sequence model: a Wengert
//! tape over a fixed primitive set (matmul, add, mul, softmax, layernorm,
//! gelu, row gather, MSE) plus an Adam optimizer and a finite-difference
//! gradient checker used as the test oracle.
//!
//! Everything is generic over [`Real`] so gradient checks run in f64 while
//! training runs in f32. All loops are single-threaded and execute in a
//! fixed order; identical inputs produce bit-identical outputs.

mod adam;
mod fdcheck;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use fdcheck::{finite_diff_check, max_rel_gradient_error};
pub use tape::{Gradients, NodeId, ParamId, Tape};
pub use tensor::{Real, Tensor};

use thiserror::Error;

/// Errors surfaced by tensor construction, tape evaluation and the optimizer.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: extents must be >= 1 and match data length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("loss node must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape is structurally invalid: {0}")]
    InvalidTape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type NumResult<V> = Result<V, NumError>;
