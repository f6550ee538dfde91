use std::fmt;

/// Unified error type for the whole framework.
#[derive(Debug)]
pub enum Error {
    /// A shape was structurally invalid (zero extent, rank out of range, overflow).
    InvalidShape(String),
    /// Two shapes or element counts that must agree did not.
    ShapeMismatch(String),
    /// Caller-supplied data violated a precondition (label out of range, batch too large).
    InvalidInput(String),
    /// Net/solver config file could not be parsed or referenced something undefined.
    Config(String),
    /// A binary file (snapshot, dataset) was malformed.
    Format(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidShape(msg) => write!(f, "invalid shape: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
