//! Error classes mapped to process exit codes: 2 for configuration, 3 for
//! data and I/O, 4 for numeric failure.

use std::fmt;

use tsgcl_core::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Prefix the message with the file it concerns, keeping the class.
    pub fn with_path(self, path: &std::path::Path) -> CliError {
        let tag = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Config(m) => CliError::Config(tag(m)),
            CliError::Data(m) => CliError::Data(tag(m)),
            CliError::Numeric(m) => CliError::Numeric(tag(m)),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration: {msg}"),
            CliError::Data(msg) => write!(f, "data: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric: {msg}"),
        }
    }
}

/// A training failure is classified by its root cause; the epoch and
/// dialogue context stay in the message.
fn class_of(e: &CoreError) -> fn(String) -> CliError {
    match e {
        CoreError::InvalidArgument(_) => CliError::Config,
        CoreError::DataFormat { .. } | CoreError::UnknownLabel(_) | CoreError::Io(_) => {
            CliError::Data
        }
        CoreError::NonFinite { .. } | CoreError::ShapeMismatch { .. } => CliError::Numeric,
        CoreError::Training { source, .. } => class_of(source),
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        class_of(&e)(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
