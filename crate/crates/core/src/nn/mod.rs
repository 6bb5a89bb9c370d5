//! Minimal tensor and backpropagation kernel shared by the GAN and the completer.

mod checkpoint;
mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use optim::{Adam, Param, ParamStore};
pub use tape::{Conv1dSpec, Gradients, Tape, Var};
pub use tensor::{log_softmax_row, sigmoid, softmax_row, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gradient for unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}
