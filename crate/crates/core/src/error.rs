use std::path::PathBuf;

use pad_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PadError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: malformed file at byte {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },
    #[error("checkpoint config mismatch\n  stored:   {stored}\n  expected: {expected}")]
    ConfigMismatch { stored: String, expected: String },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PadError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PadError {
    let path = path.into();
    move |source| PadError::Io { path, source }
}
