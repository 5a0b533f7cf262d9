use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the simulator. Each variant maps to one failure family
/// so callers (the experiment driver in particular) can pick an exit code.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not line up.
    Shape(String),
    /// An index (token id, layer index, target id) is out of range.
    Index(String),
    /// A documented precondition was violated.
    Contract(String),
    /// A pipeline stage stopped responding or hung up early.
    PipelineFault { stage: usize, reason: String },
    /// A binary or JSON artifact could not be parsed.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::PipelineFault { stage, reason } => {
                write!(f, "pipeline fault at stage {stage}: {reason}")
            }
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

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

pub(crate) fn index_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Index(msg.into()))
}
