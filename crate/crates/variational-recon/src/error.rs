use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("optimization failure at iteration {iter}: {what}")]
    OptimizationFailure { iter: usize, what: String },

    #[error(transparent)]
    Volume(#[from] volume_core::VolumeError),

    #[error(transparent)]
    Sampling(#[from] sampling_forward::SamplingError),

    #[error(transparent)]
    Prior(#[from] diffusion_prior::PriorError),

    #[error(transparent)]
    Repr(#[from] representations::ReprError),

    #[error(transparent)]
    Kernel(#[from] kernel_interp::KernelError),
}

impl ReconError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        ReconError::InvalidArgument(msg.into())
    }
}
