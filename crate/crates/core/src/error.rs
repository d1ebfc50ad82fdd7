use std::path::{Path, PathBuf};
use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: usage/config problems exit with 1,
/// data problems with 2, numeric failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer received operands of incompatible shape.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration or API misuse.
    #[error("config error: {0}")]
    Config(String),

    /// Problem with an input file, manifest record, or transcript.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite loss or gradient.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The label sequence cannot be aligned: it needs more frames than the
    /// output lattice provides.
    #[error("unsatisfiable target: needs {required} frames, lattice has {available}")]
    CtcUnsatisfiable { required: usize, available: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Config(_) => 1,
            Error::Data(_) | Error::CtcUnsatisfiable { .. } | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}
