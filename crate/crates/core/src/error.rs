//! Shared error type for the whole pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes for an operation.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation produced a NaN or infinite value. Fail fast instead of
    /// letting it propagate through the tape.
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    /// Malformed input data; `line` is 1-based.
    #[error("line {line}: {msg}")]
    DataFormat { line: usize, msg: String },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    /// A caller-supplied argument violates a precondition.
    #[error("{0}")]
    InvalidArgument(String),

    /// Numeric failure during training, with the batch coordinates attached.
    #[error("training failed at epoch {epoch}, dialogue {dialogue}: {source}")]
    Training {
        epoch: usize,
        dialogue: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(line: usize, msg: impl Into<String>) -> Self {
        Error::DataFormat {
            line,
            msg: msg.into(),
        }
    }
}
