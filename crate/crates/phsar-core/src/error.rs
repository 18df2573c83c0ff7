//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps variants to exit codes: `Argument` is a usage error,
/// `Io`/`Format`/`Model` are I/O-class failures, `Training` means the
/// training run produced no usable data.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation argument was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Reading or writing a file failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file was readable but not in a supported format.
    #[error("unsupported format: {0}")]
    Format(String),

    /// A model file is truncated or internally inconsistent.
    #[error("model file corrupt: {0}")]
    Model(String),

    /// Training could not produce a model.
    #[error("training failed: {0}")]
    Training(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
