use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum HaloError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("unknown prompt class {0}")]
    UnknownClass(usize),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("provenance check failed: {0}")]
    Provenance(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HaloError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(HaloError::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HaloError::InvalidArgument(msg.into()))
}
