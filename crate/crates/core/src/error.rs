use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Array lengths or mode counts disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An input violates an operation's contract (e.g. non-Hermitian modes).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A frequency lies outside the range covered by the log-spectrum grid.
    #[error("out of range: {0}")]
    OutOfRange(String),
    /// Invalid model or run parameter.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Non-finite values, singular systems or divergent iterations.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
