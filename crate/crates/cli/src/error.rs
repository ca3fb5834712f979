use std::io;
use std::path::PathBuf;

use fimlab::FimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Fim(#[from] FimError),

    #[error("{path}: {message}")]
    InvalidJson { path: PathBuf, message: String },

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Fim(e) => e.code(),
            CliError::InvalidJson { .. } => "invalid_json",
            CliError::Config(_) => "invalid_config",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
        }
    }

    /// 2 for numerical failures, 1 for everything the caller can fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Fim(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "code": self.code(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
    }
}

pub type CliResult<T> = Result<T, CliError>;
