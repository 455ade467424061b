use std::path::PathBuf;

/// Errors raised across the training stack.
#[derive(Debug, thiserror::Error)]
pub enum AparlError {
    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed call arguments (token ids, lengths, empty inputs).
    #[error("input error: {0}")]
    Input(String),
    /// Dataset generation violated a structural limit.
    #[error("generation error: {0}")]
    Generation(String),
    /// Model shape does not match the vocabulary or dataset it is used with.
    #[error("shape error: {0}")]
    Shape(String),
    /// A checkpoint was written by an incompatible format version.
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    /// A checkpoint or data file could not be decoded.
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    /// Non-finite loss, gradient, or parameter.
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AparlError>;

impl AparlError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AparlError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        AparlError::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
