use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("missing required special tokens: {0}")]
    MissingSpecialTokens(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("position {position} out of range for sequence of length {len}")]
    OutOfRange { position: usize, len: usize },

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate vector: {0}")]
    Degenerate(String),

    #[error("non-finite loss in {phase} at step {step}: {detail}")]
    NonFiniteLoss {
        phase: String,
        step: usize,
        detail: String,
    },

    #[error("bad binary container {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for process exit codes and the C ABI.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Parse { .. }
            | Error::DuplicateToken { .. }
            | Error::MissingSpecialTokens(_)
            | Error::Format { .. }
            | Error::Json(_) => ErrorCategory::Parse,
            Error::IdOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::OutOfRange { .. }
            | Error::InvalidInput(_)
            | Error::Degenerate(_) => ErrorCategory::InvalidInput,
            Error::InvalidConfig(_) => ErrorCategory::Config,
            Error::FingerprintMismatch(_) => ErrorCategory::Fingerprint,
            Error::NonFiniteLoss { .. } => ErrorCategory::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Parse,
    InvalidInput,
    Config,
    Fingerprint,
    Numeric,
}

impl ErrorCategory {
    /// Exit code reported by the CLI. 2 is reserved for usage errors.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Io => 3,
            ErrorCategory::Parse => 4,
            ErrorCategory::InvalidInput => 5,
            ErrorCategory::Config => 6,
            ErrorCategory::Fingerprint => 7,
            ErrorCategory::Numeric => 8,
        }
    }
}
