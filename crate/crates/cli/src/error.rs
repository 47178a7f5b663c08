use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("invalid input: {0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } | CliError::Input(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            msg: err.to_string(),
        }
    }
}

/// Engine errors raised while setting up a run from a config.
pub fn config_err(e: probspec::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Engine errors raised while stepping.
pub fn numerical(e: probspec::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

pub type CliResult<T> = std::result::Result<T, CliError>;
