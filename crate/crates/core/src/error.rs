use thiserror::Error;

/// Errors produced anywhere in the unmixing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("unsupported split factor tau = {0} (supported: 2, 4)")]
    UnsupportedTau(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("QDIP training diverged at iteration {iteration} (loss = {loss})")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
