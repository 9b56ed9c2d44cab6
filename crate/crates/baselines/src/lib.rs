//! Comparison reconstruction methods: an axis-cycling decomposed diffusion
//! sampler with conjugate-gradient data consistency, and L1-wavelet
//! regularized least squares solved with monotone FISTA.

mod dds;
mod error;
mod wavelet;

pub use dds::{axis_cycle, cg_data_consistency, reconstruct_dds3d, SamplerConfig};
pub use error::BaselineError;
pub use wavelet::{
    dwt3_forward, dwt3_inverse, reconstruct_l1wavelet, soft_threshold_complex, FistaReport,
};

pub type Result<T> = std::result::Result<T, BaselineError>;
