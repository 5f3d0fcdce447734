use thiserror::Error;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Core(#[from] cellfree_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario field `{field}`: {reason}")]
    Scenario { field: String, reason: String },
    #[error("run record: {0}")]
    Record(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("remote backend: {0}")]
    Http(#[from] reqwest::Error),
}

pub type Result<T> = std::result::Result<T, RuntimeError>;

pub(crate) fn field(field: &str, reason: impl Into<String>) -> RuntimeError {
    RuntimeError::Scenario { field: field.into(), reason: reason.into() }
}
