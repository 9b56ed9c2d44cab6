use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible acceleration: {0}")]
    InfeasibleAcceleration(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error(transparent)]
    Volume(#[from] volume_core::VolumeError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SamplingError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SamplingError::InvalidArgument(msg.into())
    }
}
