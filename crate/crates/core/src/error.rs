use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ApeError> = std::result::Result<T, E>;

/// Errors produced by the toolkit.
///
/// Every variant maps onto one of four coarse categories (see
/// [`ApeError::category`]) which the command line surface turns into exit
/// codes.
#[derive(Debug, Error)]
pub enum ApeError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error: {path} has {found} lines, expected {expected}")]
    Alignment {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("contract violation in {phase} phase: {message}")]
    Contract { phase: &'static str, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

/// Coarse error classes, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl ApeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ApeError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            ApeError::Argument(_) | ApeError::Config(_) => ErrorCategory::Config,
            ApeError::Numeric(_) | ApeError::Tensor(_) => ErrorCategory::Numeric,
            ApeError::Alignment { .. }
            | ApeError::Parse { .. }
            | ApeError::Contract { .. }
            | ApeError::Checkpoint(_)
            | ApeError::Io { .. }
            | ApeError::Json(_) => ErrorCategory::Data,
        }
    }
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Numeric => "numeric",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}
