use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library and the command line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("size error: {what} has {size} elements, cap is {cap}")]
    Size { what: String, size: u128, cap: u128 },

    #[error("division error: {0}")]
    Division(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fixed point for group {group:?} did not converge (residual {residual:.3e})")]
    NotConverged { group: Vec<usize>, residual: f64 },

    #[error("linear algebra failure: {0}")]
    LinAlg(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
