//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two grids that must share dimensions do not.
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A value or combination of values violates a construction invariant.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Grid too small for the requested operation (e.g. a 1x1 CutMix).
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    /// Training produced a non-finite value.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: config errors are 1, runtime failures 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_same_hw(
    context: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{}x{}", a.0, a.1),
            actual: format!("{}x{}", b.0, b.1),
        });
    }
    Ok(())
}
