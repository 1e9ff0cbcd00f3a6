use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum MsrlError {
    #[error("empty logits")]
    EmptyLogits,

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("unsupported dtype code {code} in {path}")]
    UnsupportedDtype { path: PathBuf, code: u32 },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("size mismatch in {path}: header declares {declared} values, payload holds {actual}")]
    SizeMismatch {
        path: PathBuf,
        declared: u64,
        actual: u64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("misaligned views: {0}")]
    Misaligned(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (term {term})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        term: &'static str,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MsrlError {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        MsrlError::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MsrlError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by invalid numbers rather than bad input files.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MsrlError::NonFiniteLoss { .. })
    }
}

pub type Result<T> = std::result::Result<T, MsrlError>;
