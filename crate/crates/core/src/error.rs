use std::fmt;

/// Errors raised by the engine, the degradation pipeline, the model and the
/// training loop.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate range: image is constant (value {0})")]
    DegenerateRange(f64),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub(crate) fn usage(msg: impl fmt::Display) -> Self {
        Error::Usage(msg.to_string())
    }

    pub(crate) fn format(offset: u64, msg: impl fmt::Display) -> Self {
        Error::Format {
            offset,
            message: msg.to_string(),
        }
    }
}
