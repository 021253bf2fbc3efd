use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the eye center toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("item {index}: {reason}")]
    BadItem { index: usize, reason: String },

    #[error("degenerate eye region: {0}")]
    DegenerateEyeRegion(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("model does not match its HoG configuration: {0}")]
    ModelMismatch(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("truncated stream: {0}")]
    Truncated(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the content of input data rather than by a bug
    /// or an environment failure.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
