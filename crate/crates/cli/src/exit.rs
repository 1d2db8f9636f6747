use std::fmt;

use woundwatch_core::backend::BackendError;
use woundwatch_core::config::ConfigError;
use woundwatch_core::{Coded, ErrorClass, StoreError};

/// Process exit statuses. Stable; scripts may rely on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Exit {
    Success = 0,
    Internal = 1,
    Usage = 2,
    /// Image or model file that cannot be decoded.
    Unsupported = 3,
    NotFound = 4,
    Conflict = 5,
    Validation = 6,
    /// Input file (log, JSONL) that does not parse.
    Malformed = 7,
    BackendUnavailable = 8,
    Config = 9,
    /// Store file unreadable, corrupt or not writable.
    Storage = 10,
}

impl Exit {
    pub fn for_class(class: ErrorClass) -> Self {
        match class {
            ErrorClass::Malformed => Exit::Malformed,
            ErrorClass::Validation => Exit::Validation,
            ErrorClass::NotFound => Exit::NotFound,
            ErrorClass::Conflict => Exit::Conflict,
            ErrorClass::Unsupported => Exit::Unsupported,
            ErrorClass::Unavailable => Exit::BackendUnavailable,
            ErrorClass::Internal => Exit::Internal,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, code: &str, message: impl Into<String>) -> Self {
        CliError {
            exit,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn coded<E: Coded + fmt::Display>(e: &E) -> Self {
        CliError::new(Exit::for_class(e.class()), e.code(), e.to_string())
    }

    pub fn io(context: impl fmt::Display, e: std::io::Error) -> Self {
        CliError::new(Exit::Storage, "io_error", format!("{context}: {e}"))
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::new(Exit::Usage, "usage", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.message, self.code)
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) | StoreError::Format(_) | StoreError::Replay { .. } => {
                CliError::new(Exit::Storage, e.code(), e.to_string())
            }
            other => CliError::coded(&other),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Backend(b) => b.into(),
            other => CliError::new(Exit::Config, other.code(), other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) => CliError::new(Exit::Config, e.code(), e.to_string()),
            BackendError::UnsupportedFormat(_) | BackendError::ShapeMismatch(_) => {
                CliError::new(Exit::Unsupported, e.code(), e.to_string())
            }
            other => CliError::coded(&other),
        }
    }
}
