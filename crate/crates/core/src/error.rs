use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical instability: {0}")]
    Unstable(String),
    #[error("resolution violated: {0}")]
    Resolution(String),
    #[error("schedule violated: {0}")]
    Schedule(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
