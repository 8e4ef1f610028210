//! Crate-wide error type.

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Stored state became non-finite or otherwise unusable.
    #[error("corrupt state: {0}")]
    CorruptState(String),
    /// Configuration file or override problem.
    #[error("config error: {0}")]
    Config(String),
    /// A serialized artifact (checkpoint, curriculum, metrics) failed to parse.
    #[error("parse error: {0}")]
    Parse(String),
    /// Internal invariant broken; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }

    pub fn corrupt(msg: impl Into<String>) -> Self {
        LabError::CorruptState(msg.into())
    }
}
