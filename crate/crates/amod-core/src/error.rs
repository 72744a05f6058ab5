use thiserror::Error;

pub type Result<T> = std::result::Result<T, AmodError>;

#[derive(Debug, Error)]
pub enum AmodError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("instance too large for brute force: {0}")]
    TooLarge(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
