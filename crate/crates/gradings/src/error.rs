use thiserror::Error;

/// Library-wide error type.
///
/// Variants are grouped so callers (notably the CLI) can map them onto the
/// stable exit-code contract: input errors, training failures, and
/// configuration mismatches are distinguishable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// A numeric operation produced NaN or Inf.
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("training failed at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// Model/data/W disagreement (e.g. scoring a 40-dim model with W=20 segments).
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
