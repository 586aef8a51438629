//! Differentiable model: character-CNN token embedder, Transformer encoder,
//! masked-token head, LSTM label decoder, adaptive softmax and MNR loss.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use graph::{logsumexp, Gradients, Graph, Var};
pub use layers::DropoutCtx;
pub use loss::{mnr_loss, mnr_loss_node, mnr_loss_with_grads};
pub use model::{argmax_rows, default_filters, DecodeMode, DecodeOutput, EncoderOutput, Model, ModelConfig};
pub use optim::AdamW;
pub use params::{ParamGrads, ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input sequence has {got} positions, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("batch mismatch: {anchors} anchors vs {positives} positives")]
    BatchMismatch { anchors: usize, positives: usize },
    #[error("target token {0:?} is not in the vocabulary")]
    TargetNotInVocab(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
}
