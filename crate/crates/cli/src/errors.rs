//! CLI error classification onto exit codes.

use std::fmt;

use restore_core::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Inconsistent flags or configuration; exit 1.
    Usage(String),
    /// Unreadable, unpaired or malformed data; exit 2.
    Data(String),
    /// Numerical failure; exit 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io { .. }
            | CoreError::ImageFormat { .. }
            | CoreError::BadMagic
            | CoreError::UnsupportedVersion { .. }
            | CoreError::ChecksumMismatch
            | CoreError::Truncated(_)
            | CoreError::HeaderInconsistent(_) => CliError::Data(e.to_string()),
            CoreError::Numerical(_) | CoreError::InvariantViolation(_) => {
                CliError::Numerical(e.to_string())
            }
            CoreError::Config(_)
            | CoreError::RejectedInput(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::NotImplemented(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult = Result<(), CliError>;
