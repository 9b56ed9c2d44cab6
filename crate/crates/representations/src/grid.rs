use ndarray::{Array2, Array3};
use volume_core::{Mesh2D, Mesh3D, C32};

use crate::{ReprError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMode {
    Trilinear,
    Nearest,
}

/// Voxel-grid parameterization evaluated off-grid by interpolation.
#[derive(Debug, Clone)]
pub struct GridRepr {
    pub grid: Array3<C32>,
    pub mode: InterpMode,
}

impl GridRepr {
    pub fn new(grid: Array3<C32>, mode: InterpMode) -> Self {
        Self { grid, mode }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.grid.dim()
    }
}

/// Index-space position of normalized coordinate `c` on a size-`n` axis of
/// cell centers, clamped to the edge. Positions within 1e-4 of a node snap
/// to it so on-grid evaluation is exact.
#[inline]
fn index_pos(c: f32, n: usize) -> f32 {
    let mut u = (c + 1.0) * 0.5 * n as f32 - 0.5;
    let r = u.round();
    if (u - r).abs() < 1e-4 {
        u = r;
    }
    u.clamp(0.0, (n - 1) as f32)
}

#[inline]
fn axis_weights(u: f32, n: usize) -> (usize, usize, f32) {
    let lo = u.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, u - lo as f32)
}

fn check_coord(c: f32) -> Result<()> {
    if !(-1.0..=1.0).contains(&c) {
        return Err(ReprError::invalid(format!(
            "mesh coordinate {c} outside [-1, 1]"
        )));
    }
    Ok(())
}

fn gather(grid: &Array3<C32>, mode: InterpMode, p: [f32; 3]) -> C32 {
    let (w, h, d) = grid.dim();
    let u = index_pos(p[0], w);
    let v = index_pos(p[1], h);
    let s = index_pos(p[2], d);
    match mode {
        InterpMode::Nearest => {
            grid[[u.round() as usize, v.round() as usize, s.round() as usize]]
        }
        InterpMode::Trilinear => {
            let (x0, x1, fx) = axis_weights(u, w);
            let (y0, y1, fy) = axis_weights(v, h);
            let (z0, z1, fz) = axis_weights(s, d);
            let c00 = grid[[x0, y0, z0]] * (1.0 - fz) + grid[[x0, y0, z1]] * fz;
            let c01 = grid[[x0, y1, z0]] * (1.0 - fz) + grid[[x0, y1, z1]] * fz;
            let c10 = grid[[x1, y0, z0]] * (1.0 - fz) + grid[[x1, y0, z1]] * fz;
            let c11 = grid[[x1, y1, z0]] * (1.0 - fz) + grid[[x1, y1, z1]] * fz;
            let c0 = c00 * (1.0 - fy) + c01 * fy;
            let c1 = c10 * (1.0 - fy) + c11 * fy;
            c0 * (1.0 - fx) + c1 * fx
        }
    }
}

/// Adjoint of `gather`: distribute an upstream value onto the grid with the
/// interpolation weights.
fn scatter(grid: &mut Array3<C32>, mode: InterpMode, p: [f32; 3], g: C32) {
    let (w, h, d) = grid.dim();
    let u = index_pos(p[0], w);
    let v = index_pos(p[1], h);
    let s = index_pos(p[2], d);
    match mode {
        InterpMode::Nearest => {
            grid[[u.round() as usize, v.round() as usize, s.round() as usize]] += g;
        }
        InterpMode::Trilinear => {
            let (x0, x1, fx) = axis_weights(u, w);
            let (y0, y1, fy) = axis_weights(v, h);
            let (z0, z1, fz) = axis_weights(s, d);
            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                    if wy == 0.0 {
                        continue;
                    }
                    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                        if wz == 0.0 {
                            continue;
                        }
                        grid[[xi, yi, zi]] += g * (wx * wy * wz);
                    }
                }
            }
        }
    }
}

/// Evaluate the grid at every node of a 3D mesh.
pub fn resample_grid_mesh3(repr: &GridRepr, mesh: &Mesh3D) -> Result<Array3<C32>> {
    for &c in mesh.xs.iter().chain(mesh.ys.iter()).chain(mesh.zs.iter()) {
        check_coord(c)?;
    }
    let (nx, ny, nz) = mesh.dims();
    let mut out = Array3::<C32>::zeros((nx, ny, nz));
    for (i, &x) in mesh.xs.iter().enumerate() {
        for (j, &y) in mesh.ys.iter().enumerate() {
            for (k, &z) in mesh.zs.iter().enumerate() {
                out[[i, j, k]] = gather(&repr.grid, repr.mode, [x, y, z]);
            }
        }
    }
    Ok(out)
}

/// Evaluate the grid on a 2D mesh view.
pub fn resample_grid_mesh2(repr: &GridRepr, mesh: &Mesh2D) -> Result<Array2<C32>> {
    check_coord(mesh.position)?;
    for &c in mesh.xs.iter().chain(mesh.ys.iter()) {
        check_coord(c)?;
    }
    let (nx, ny) = mesh.dims();
    let mut out = Array2::<C32>::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            out[[i, j]] = gather(&repr.grid, repr.mode, mesh.point(i, j));
        }
    }
    Ok(out)
}

/// Adjoint of `resample_grid_mesh3`.
pub fn scatter_grid_mesh3(
    dims: (usize, usize, usize),
    mode: InterpMode,
    mesh: &Mesh3D,
    upstream: &Array3<C32>,
) -> Array3<C32> {
    let mut out = Array3::<C32>::zeros(dims);
    for (i, &x) in mesh.xs.iter().enumerate() {
        for (j, &y) in mesh.ys.iter().enumerate() {
            for (k, &z) in mesh.zs.iter().enumerate() {
                scatter(&mut out, mode, [x, y, z], upstream[[i, j, k]]);
            }
        }
    }
    out
}

/// Adjoint of `resample_grid_mesh2`: scatter per-node gradients back onto a
/// grid of shape `dims`.
pub fn scatter_grid_mesh2(
    dims: (usize, usize, usize),
    mode: InterpMode,
    mesh: &Mesh2D,
    upstream: &Array2<C32>,
) -> Array3<C32> {
    let mut out = Array3::<C32>::zeros(dims);
    for ((i, j), &g) in upstream.indexed_iter() {
        scatter(&mut out, mode, mesh.point(i, j), g);
    }
    out
}
