//! Autoregressive actor and token-level critic over tabular or small-network backends.

mod actor;
mod adam;
mod checkpoint;
mod critic;
mod encoder;
mod model;

pub use actor::{masked_softmax, AutoregressivePolicy};
pub use adam::{grad_step, Adam, AdamConfig, StepStats};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use critic::{CriticView, TokenCritic};
pub use encoder::Encoder;
pub use model::{Backend, Forward, Model, SMALLNET_HIDDEN};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("token {token} at position {position} is masked out")]
    IllegalAction { position: usize, token: usize },
    #[error("non-finite gradient at parameter {index}")]
    Numerical { index: usize },
    #[error("gradient has {got} entries for {expected} parameters")]
    Dimension { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
