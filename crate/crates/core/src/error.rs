use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced anywhere in the scan-to-report pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// The bytes do not describe a volume file (bad magic, unknown version,
    /// truncated payload).
    #[error("malformed volume file: {0}")]
    Format(String),

    /// The data parsed but violates a domain invariant.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("coordinates ({row}, {col}) outside {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("average precision is undefined: dataset has no ground truths")]
    UndefinedAp,

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// True for failures of the environment (disk, permissions) rather than
    /// of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
