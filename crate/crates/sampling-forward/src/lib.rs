//! Undersampling mask generation and the multicoil 3D Fourier forward and
//! adjoint operators, plus the fully-sampled MVUE reference and measurement
//! scaling.
//!
//! The forward model per coil is `y_i = M F3 S_i x + z_i` with a unitary 3D
//! DFT `F3`, coil sensitivity `S_i`, and a mask `M` living on the (H, D)
//! phase-encode plane, broadcast along the fully-sampled readout axis W.

mod error;
mod fft;
pub mod io;
mod mask;
mod ops;

pub use error::SamplingError;
pub use fft::{fft3_unitary, ifft3_unitary};
pub use io::{read_cksp, write_cksp};
pub use mask::{gen_gaussian_mask, gen_poisson_mask, poisson_radius, MaskKind, SamplingMask};
pub use ops::{add_noise, adjoint, forward, mvue, scale_measurements, MulticoilKSpace};

pub type Result<T> = std::result::Result<T, SamplingError>;
