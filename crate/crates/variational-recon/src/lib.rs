//! Variational 3D reconstruction: first-order optimization of a
//! representation's parameters against the multicoil data-consistency term
//! plus diffusion-guided regularization of randomly sampled slabs of 2D
//! slices, using the identity-Jacobian gradient approximation.

mod backend;
mod config;
mod error;
mod gradient;
mod recon;
mod slabs;

pub use backend::{GaussianBackend, GridBackend, InnBackend, ReprBackend, VoxelBackend};
pub use config::{KernelInterpChoice, ReconConfig, Representation};
pub use error::ReconError;
pub use gradient::{reg_gradient, RegGrad};
pub use recon::{dc_gradient, reconstruct_core, reconstruct_variational, KernelResizeLog, RunLog};
pub use slabs::{sample_slabs, slab_indices, SlabPlan, SlabRun};

pub type Result<T> = std::result::Result<T, ReconError>;
