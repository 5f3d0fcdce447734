use thiserror::Error;

/// Errors raised by the digital twin.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("intent rejected: {0}")]
    IntentRejected(String),

    #[error("no trained activation policy available: {0}")]
    MissingCheckpoint(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::Numeric(msg.into())
}
