//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the restoration library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands (images, masks, filters) disagree in shape.
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// An input violates a precondition (non-finite data, even filter size, ...).
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A configuration is inconsistent or incomplete (missing lambda, bad schedule, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A runtime invariant was violated (tape/model mismatch, plugin output shape, ...).
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// A numerical failure that cannot be recovered from (non-finite loss, singular solve).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// File I/O failure with path context.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file that is not a model file at all.
    #[error("bad magic: not a model file")]
    BadMagic,

    /// A model file written by a newer library version.
    #[error("unsupported model version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Model file payload does not match its checksum.
    #[error("model file checksum mismatch (corrupt or truncated file)")]
    ChecksumMismatch,

    /// Model file header fields are mutually inconsistent.
    #[error("model file header inconsistency: {0}")]
    HeaderInconsistent(String),

    /// Model file ends before the declared payload.
    #[error("model file truncated: {0}")]
    Truncated(String),

    /// Image decode/encode failure.
    #[error("image format error on {path}: {message}")]
    ImageFormat { path: PathBuf, message: String },

    /// Requested operation is not implemented for this variant.
    #[error("not implemented: {0}")]
    NotImplemented(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
