use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid maneuver: {0}")]
    InvalidManeuver(String),

    /// Inconsistent dimensions or model parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Error while parsing a flat key-value experiment file.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("scenario generation failed after {attempts} attempts")]
    Generation { attempts: usize },

    #[error("i/o error on {path}: {source}")]
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
}
