use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The state-space model itself is malformed or unsolvable.
    #[error("model error: {0}")]
    Model(String),

    /// A Schur complement in the block Cholesky recursion was not positive definite.
    #[error("constraint matrix is not surjective: Cholesky pivot failed at step {step}")]
    NotSurjective { step: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("not implemented: {0}")]
    NotImplemented(String),

    /// Failure inside a validation oracle (dense KKT, RTS).
    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("non-finite iterate detected at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
