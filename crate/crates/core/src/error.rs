use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("format error in {file}{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format {
        file: String,
        offset: Option<usize>,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        left: impl Into<String>,
        right: impl Into<String>,
    ) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn format(
        file: impl Into<String>,
        offset: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            file: file.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit category: 1 usage, 2 format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Format { .. } | Error::Io { .. } => 2,
            Error::Shape { .. }
            | Error::Config(_)
            | Error::Range(_)
            | Error::State(_)
            | Error::Invariant(_) => 1,
        }
    }
}
