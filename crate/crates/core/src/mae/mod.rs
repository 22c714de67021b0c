//! Masked autoencoder: patch tokens of one input channel are partly masked,
//! the visible ones encoded by a transformer, and a decoder with a learned
//! mask token reconstructs every target channel patch by patch.

mod config;
mod gradcheck;
mod loss;
mod mask;
mod model;
mod params;

use alloc::string::String;

pub use config::{LossScope, MaeConfig};
pub use gradcheck::{tiny_grad_check, TINY_FD_STEP};
pub use loss::{cosine_loss, cosine_loss_on_tape, COSINE_EPS};
pub use mask::{make_mask, MaskPlan};
pub use model::{patchify, unpatchify, BoundMae, ExampleGraph, MaeModel};
pub use params::{Block, LayerNormParams, Linear, MaeParams, ParamKind, ParamSlot};

use crate::numcore::NumError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaeError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} samples, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("batch mixes input channels or target sets")]
    HeterogeneousBatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("epoch is missing target channel `{0}`")]
    MissingTarget(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[cfg(test)]
mod tests;
