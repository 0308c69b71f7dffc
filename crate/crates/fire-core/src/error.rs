//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FireError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sample generation failed: {0}")]
    Generation(String),

    #[error("numeric failure at iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String },
}

impl FireError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        FireError::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FireError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        FireError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for input problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            FireError::Numeric { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, FireError>;
