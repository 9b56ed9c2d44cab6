//! Continuous volume backends for variational reconstruction: grid
//! resampling, implicit neural representation with Fourier features, and
//! complex 3D Gaussian splatting, plus resolution-matched 2D mesh views.

mod error;
mod gaussians;
mod grid;
mod inn;
mod mesh_view;

pub use error::ReprError;
pub use gaussians::{
    init_gaussians_from_volume, rasterize_points_bruteforce, rasterize_points_bruteforce64,
    read_gaussians, write_gaussians, GaussianCloud, GaussianGrads, TRUNC_SIGMAS,
};
pub use grid::{
    resample_grid_mesh2, resample_grid_mesh3, scatter_grid_mesh2, scatter_grid_mesh3, GridRepr,
    InterpMode,
};
pub use inn::{mesh2_points, mesh3_points, Inn, InnConfig};
pub use mesh_view::make_mesh2_for_view;

pub type Result<T> = std::result::Result<T, ReprError>;
