use thiserror::Error;

/// Errors raised by the tensor kernels, update rules and protocol layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank mismatch: {left} vs {right}")]
    RankMismatch { left: usize, right: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system while updating mode {mode} (condition estimate {condition:.3e})")]
    Singular { mode: usize, condition: f64 },

    #[error("duplicate element {0} in set")]
    DuplicateElement(u64),

    #[error("alignment aborted for mode {mode}: {reason}")]
    AlignmentConflict { mode: usize, reason: String },

    #[error("frame decode error at offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("peer aborted: {0}")]
    Aborted(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
