use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid discretization: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("potential violates positivity: minimum {min} on grid (need > 0)")]
    NonPositivePotential { min: f64 },

    #[error("degenerate seed: {0}")]
    DegenerateSeed(String),

    #[error("iterate collapsed to zero: {0}")]
    Collapse(String),

    #[error("iterate within {distance:.3e} of stored solution {index} (limit {limit:.3e})")]
    DeflationProximity {
        index: usize,
        distance: f64,
        limit: f64,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("field file format: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }
}
