//! Dense tensors, a reverse-mode gradient tape, Adam, and finite-difference
//! gradient verification.

mod adam;
mod gradcheck;
mod kernels;
mod scalar;
mod tape;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("loss must be a single element, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
    #[error("variable does not belong to this tape")]
    DetachedTensor,
    #[error("non-finite value encountered in {context}")]
    NonFiniteValue { context: String },
}
