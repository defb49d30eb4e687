use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScasError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("instance too large for brute-force search: {0}")]
    InstanceTooLarge(String),

    #[error("dynamics model has not been trained (0 gradient steps)")]
    UntrainedDynamics,

    #[error("state normalization statistics of dataset and dynamics model differ")]
    NormalizationMismatch,

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ScasError> = std::result::Result<T, E>;

impl ScasError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScasError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        ScasError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(ScasError::ShapeMismatch {
            context,
            expected,
            got,
        })
    }
}
