//! Core tensor types for complex 3D volumes: coordinate meshes, synthetic
//! phantom and coil-map generation, resolution resampling, and the `.cvol`
//! and `.maps` persistence formats shared by the rest of the workspace.
//!
//! Conventions used throughout:
//! - volumes are indexed `[W, H, D]` with `D` fastest-varying (row-major),
//! - normalized coordinates live in `[-1, 1]^3` on cell centers,
//! - interpolation clamps to the edge of the grid.

mod coils;
mod error;
pub mod io;
mod mesh;
mod phantom;
mod resample;
mod volume;

pub use coils::{synth_coil_maps, CoilSensitivities};
pub use error::VolumeError;
pub use io::{read_cvol, read_maps, write_cvol, write_maps};
pub use mesh::{axis_coords, make_mesh3, make_mesh3_with_spacing, Mesh2D, Mesh3D, Plane};
pub use phantom::generate_phantom;
pub use resample::trilinear_downsample;
pub use volume::ComplexVolume;

pub use ndarray;
pub use num_complex;

/// Workspace-wide complex scalar for volume data.
pub type C32 = num_complex::Complex32;

pub type Result<T> = std::result::Result<T, VolumeError>;
