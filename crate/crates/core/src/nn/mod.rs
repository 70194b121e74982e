//! Tensors, reverse-mode differentiation, the convolutional backbone and
//! classifier, the optimizer and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod optim;
pub mod tensor;

use crate::contrastive::ContrastiveError;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{same_padding, softmax_xent, BatchStats, Gradients, Graph, Mode, NodeId};
pub use model::{
    argmax_rows, classify, embed, forward_backbone, forward_classifier, init_params, is_backbone, is_buffer,
    param_shapes, BlockSpec, ForwardCtx, ModelConfig, Parameters, Preset,
};
pub use optim::{lr_schedule, sgd_momentum_step, Velocity};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("computation graph is not acyclic")]
    GraphCycle,
    #[error("non-finite value produced")]
    NonFinite,
    #[error("unknown or missing parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
