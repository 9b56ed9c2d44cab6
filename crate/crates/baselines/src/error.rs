use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Volume(#[from] volume_core::VolumeError),

    #[error(transparent)]
    Sampling(#[from] sampling_forward::SamplingError),

    #[error(transparent)]
    Prior(#[from] diffusion_prior::PriorError),
}

impl BaselineError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        BaselineError::InvalidArgument(msg.into())
    }
}
