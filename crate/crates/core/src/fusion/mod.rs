//! From-scratch MLP training on frozen embeddings: unimodal heads and the
//! two-branch fusion network, AdamW with exponential decay, grid search.

mod grid;
mod model;
mod optim;
mod train;

use thiserror::Error;

pub use grid::{grid_search, GridOutcome, GridPointResult, GridSpec};
pub use model::{Activation, DenseLayer, MlpModel, CHECKPOINT_FORMAT};
pub use optim::{adamw_step, lr_schedule, AdamW, OptimizerState};
pub use train::{
    batch_loss_and_grad, predict_batch, train_fusion, train_head, train_mlp, write_trace, EpochTrace, HeadConfig,
    TrainConfig, TrainedModel,
};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("need at least two classes, got {0}")]
    DegenerateLabels(usize),
    #[error("class {0:?} has no training examples")]
    EmptyClass(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}
