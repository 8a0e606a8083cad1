use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the recommendation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("return history needs at least 2 periods, got {0}")]
    EmptyHistory(usize),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("solver did not converge at gamma = {gamma} after {iterations} iterations")]
    SolverDivergence { gamma: f64, iterations: usize },

    #[error("no day with a non-empty portfolio in the estimation window")]
    NoValidDays,

    #[error("cutoff k = {k} outside 1..={n}")]
    InvalidCutoff { k: usize, n: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("price and snapshot universes share no asset")]
    UniverseMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}
