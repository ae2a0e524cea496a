use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments to a library call (unknown ids, mismatched sizes, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An experiment or discretization configuration that cannot be run.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown element id {id} (mesh has {count} elements)")]
    UnknownElement { id: usize, count: usize },

    /// A pivot vanished or changed sign where positive definiteness was required.
    #[error("factorization of {system} failed at pivot {index} (value {value:e})")]
    Factorization {
        system: String,
        index: usize,
        value: f64,
    },

    #[error("solve failed at time step {step}: {source}")]
    TimeStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the configuration rather than by a failed run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::InvalidInput(_) | Error::Unsupported(_)
        )
    }
}
