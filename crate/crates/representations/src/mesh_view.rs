use volume_core::{axis_coords, Mesh2D, Plane};

use crate::{ReprError, Result};

/// Build a 2D mesh over one anatomical plane whose matrix size realizes an in-plane
/// pixel size `v_train` over the fixed field of view: along each in-plane
/// axis the cell count is `round(fov / pixel)`.
pub fn make_mesh2_for_view(
    fov: [f32; 3],
    v_train: [f32; 2],
    plane: Plane,
    position: f32,
) -> Result<Mesh2D> {
    if v_train.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(ReprError::invalid(format!(
            "pixel size must be positive, got {v_train:?}"
        )));
    }
    if !(-1.0..=1.0).contains(&position) {
        return Err(ReprError::invalid(format!(
            "plane position {position} outside [-1, 1]"
        )));
    }
    let (a, b) = plane.in_plane_axes();
    let nx = (fov[a] / v_train[0]).round().max(1.0) as usize;
    let ny = (fov[b] / v_train[1]).round().max(1.0) as usize;
    Ok(Mesh2D {
        plane,
        position,
        xs: axis_coords(nx),
        ys: axis_coords(ny),
        // actual spacing after rounding, keeping the FOV exact
        pixel_size: [fov[a] / nx as f32, fov[b] / ny as f32],
    })
}
