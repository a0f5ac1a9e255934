use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, XcanError>;

#[derive(Debug, Error)]
pub enum XcanError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl XcanError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        XcanError::InvalidInput(msg.into())
    }

    pub(crate) fn dims(what: &'static str, expected: usize, got: usize) -> Self {
        XcanError::DimensionMismatch {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        XcanError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        XcanError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            XcanError::Numerical(_) => 4,
            _ => 3,
        }
    }
}
