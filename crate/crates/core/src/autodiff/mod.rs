//! Dense tensors with reverse-mode differentiation, parameter storage,
//! the Adam optimizer, checkpoint I/O and finite-difference checking.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{BatchStats, BnMode, Gradients, Graph, NodeId};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{Param, ParamStore};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batchnorm in training mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("unknown parameter {0}")]
    MissingParam(String),
}
