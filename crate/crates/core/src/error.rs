use thiserror::Error;

/// Errors raised by model construction, fitting, and I/O.
#[derive(Debug, Error)]
pub enum XtremError {
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient tail data: need at least 2 excesses, got {0}")]
    InsufficientTailData(usize),

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("gradient is not finite at coordinate {0}")]
    GradientFailure(usize),

    #[error("internal consistency error: {0}")]
    Inconsistent(String),

    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("I/O error on {path}: {error}")]
    Io { path: String, error: std::io::Error },

    #[error("serialization error: {0}")]
    Serde(serde_json::Error),
}

impl From<serde_json::Error> for XtremError {
    fn from(e: serde_json::Error) -> Self {
        XtremError::Serde(e)
    }
}

impl XtremError {
    pub(crate) fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        XtremError::Validation {
            field,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, error: std::io::Error) -> Self {
        XtremError::Io {
            path: path.as_ref().display().to_string(),
            error,
        }
    }
}

pub type Result<T> = std::result::Result<T, XtremError>;
