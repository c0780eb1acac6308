//! Crate-wide error type.

use thiserror::Error;

/// Stable machine-parsable error codes, one per failure class. The CLI
/// prints these as `ERR <code>: <message>` on stderr.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Input,
    Shape,
    Config,
    Io,
    State,
    Numeric,
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::Input => "E_INPUT",
            ErrorCode::Shape => "E_SHAPE",
            ErrorCode::Config => "E_CONFIG",
            ErrorCode::Io => "E_IO",
            ErrorCode::State => "E_STATE",
            ErrorCode::Numeric => "E_NUMERIC",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Rejected input: a caller-supplied value violates a documented
    /// precondition or invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shape violation, naming the offending dimension.
    #[error("shape error: {0}")]
    Shape(String),

    /// Run-configuration problem (unknown key, missing section, bad value).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Corrupt or inconsistent on-disk state (checkpoint, manifest, cache).
    #[error("state error: {0}")]
    State(String),

    /// Non-finite loss or other numeric breakdown, with diagnostics.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::InvalidInput(_) => ErrorCode::Input,
            Error::Shape(_) => ErrorCode::Shape,
            Error::Config(_) => ErrorCode::Config,
            Error::Io(_) => ErrorCode::Io,
            Error::State(_) => ErrorCode::State,
            Error::Numeric(_) => ErrorCode::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Err(Error::InvalidInput(format!(...)))`.
#[macro_export]
macro_rules! bail_input {
    ($($arg:tt)*) => {
        return Err($crate::Error::InvalidInput(format!($($arg)*)))
    };
}

/// Shorthand for `Err(Error::Shape(format!(...)))`.
#[macro_export]
macro_rules! bail_shape {
    ($($arg:tt)*) => {
        return Err($crate::Error::Shape(format!($($arg)*)))
    };
}
