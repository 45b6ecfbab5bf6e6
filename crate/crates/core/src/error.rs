use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A code string that is not a valid Read or BNF code.
    #[error("invalid {kind} code {code:?}: {reason}")]
    InvalidCode {
        kind: &'static str,
        code: String,
        reason: &'static str,
    },

    /// A malformed row in an input file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    /// The inputs are well formed but the requested computation is undefined.
    #[error("{0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 for domain and configuration
    /// errors, 2 for I/O and parse errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) => 1,
            Error::InvalidCode { .. } | Error::Parse { .. } | Error::Io { .. } | Error::Json(_) => {
                2
            }
        }
    }
}
