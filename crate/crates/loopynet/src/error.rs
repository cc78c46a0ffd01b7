//! Error type shared by every module, with the CLI exit-code mapping.

use thiserror::Error;

/// All failure modes of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// File could not be opened or read.
    #[error("{msg}")]
    Io {
        msg: String,
        #[source]
        source: Option<std::io::Error>,
    },
    /// Malformed input text (edge list, CSV, JSON), with position when known.
    #[error("parse error: {0}")]
    Parse(String),
    /// Input data violates the declared schema (missing/duplicate nodes, ...).
    #[error("schema error: {0}")]
    Schema(String),
    /// A value falls outside its documented range.
    #[error("range error: {0}")]
    Range(String),
    /// An index is out of bounds for the structure it addresses.
    #[error("bounds error: {0}")]
    Bounds(String),
    /// Invalid configuration (bad dimensions, k = 0, empty synth spec, ...).
    #[error("config error: {0}")]
    Config(String),
    /// Shapes of two objects that must agree do not.
    #[error("shape error: {0}")]
    Shape(String),
    /// An operation was called on objects in an inconsistent state.
    #[error("state error: {0}")]
    State(String),
    /// Non-finite numbers where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io_open(path: &std::path::Path, source: std::io::Error) -> Self {
        let msg = if source.kind() == std::io::ErrorKind::NotFound {
            format!("file not found: {}", path.display())
        } else {
            format!("cannot read {}: {}", path.display(), source)
        };
        Error::Io {
            msg,
            source: Some(source),
        }
    }

    pub fn io_write(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            msg: format!("cannot write {}: {}", path.display(), source),
            source: Some(source),
        }
    }

    /// Process exit code for the CLI: 2 usage/config/parse, 3 shape/state,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse(_)
            | Error::Schema(_)
            | Error::Range(_)
            | Error::Bounds(_)
            | Error::Config(_) => 2,
            Error::Shape(_) | Error::State(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
