use thiserror::Error;

/// Errors produced by the gaplab library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("curriculum schedule exhausted after {total_steps} steps")]
    ScheduleExhausted { total_steps: usize },

    #[error("non-finite loss at epoch {epoch}, step {step} (alpha = {alpha}): {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        alpha: f64,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
