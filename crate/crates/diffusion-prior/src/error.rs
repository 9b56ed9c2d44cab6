use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failure at step {step}: {what}")]
    TrainingFailure { step: u64, what: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Volume(#[from] volume_core::VolumeError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PriorError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        PriorError::InvalidArgument(msg.into())
    }
}
