//! Metrics, experiment orchestration (including the resolution-shift
//! cross-evaluation grid), CSV output, and plot emission.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod train_cmd;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Volume(#[from] volume_core::VolumeError),

    #[error(transparent)]
    Sampling(#[from] sampling_forward::SamplingError),

    #[error(transparent)]
    Prior(#[from] diffusion_prior::PriorError),

    #[error(transparent)]
    Repr(#[from] representations::ReprError),

    #[error(transparent)]
    Recon(#[from] variational_recon::ReconError),

    #[error(transparent)]
    Baseline(#[from] baselines::BaselineError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        BenchError::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
