use thiserror::Error;

/// Errors produced by the mask, kernel and model layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpaError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity exceeded: requested {requested}, cap is {cap}")]
    Capacity { requested: usize, cap: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("softmax row has no unmasked entries")]
    AllMasked,
    #[error("token {token} out of vocabulary (size {vocab})")]
    OutOfVocab { token: usize, vocab: usize },
    #[error("sequence length {len} exceeds maximum {max}")]
    Overlong { len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PpaError {
    fn from(e: std::io::Error) -> Self {
        PpaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PpaError>;
