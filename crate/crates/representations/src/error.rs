use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Volume(#[from] volume_core::VolumeError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ReprError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        ReprError::InvalidArgument(msg.into())
    }
}
