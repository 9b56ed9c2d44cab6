use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl VolumeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        VolumeError::InvalidArgument(msg.into())
    }
}
