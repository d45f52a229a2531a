//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value-level precondition was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A model file failed to parse.
    #[error("model file {path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    /// A model file carries a version this build does not understand.
    #[error("model file {path}: unsupported format version {found} (expected {expected})")]
    ModelVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    /// An image file uses a format outside binary PGM/PPM.
    #[error("image {path}: unsupported format: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    /// An image file is structurally broken.
    #[error("image {path}: corrupt data: {reason}")]
    CorruptImage { path: PathBuf, reason: String },

    /// A dataset manifest line failed to parse.
    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at iteration {iteration}; lower the learning rate")]
    NonFiniteLoss { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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
