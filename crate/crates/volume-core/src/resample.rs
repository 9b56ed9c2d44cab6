use ndarray::Array3;

use crate::{ComplexVolume, Result, VolumeError, C32};

/// Source index position of output cell center `i` when resizing an axis
/// from `n_old` to `n_new` cells over a fixed field of view.
#[inline]
fn src_pos(i: usize, n_old: usize, n_new: usize) -> f32 {
    (i as f32 + 0.5) * (n_old as f32 / n_new as f32) - 0.5
}

#[inline]
fn interp_axis(u: f32, n: usize) -> (usize, usize, f32) {
    // clamp-to-edge
    let u = u.clamp(0.0, (n - 1) as f32);
    let lo = u.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, u - lo as f32)
}

/// Resample a volume to `round(dims * factor)` cells per axis by trilinear
/// interpolation at the new cell centers, keeping the field of view fixed.
/// Real and imaginary parts interpolate independently.
pub fn trilinear_downsample(vol: &ComplexVolume, factor: f64) -> Result<ComplexVolume> {
    if !(factor > 0.0 && factor <= 1.0) || !factor.is_finite() {
        return Err(VolumeError::invalid(format!(
            "resample factor must lie in (0, 1], got {factor}"
        )));
    }
    let (w, h, d) = vol.dims();
    let new_dims = (
        (w as f64 * factor).round() as usize,
        (h as f64 * factor).round() as usize,
        (d as f64 * factor).round() as usize,
    );
    if new_dims.0 == 0 || new_dims.1 == 0 || new_dims.2 == 0 {
        return Err(VolumeError::invalid(format!(
            "factor {factor} collapses dims {:?} to zero",
            (w, h, d)
        )));
    }

    if new_dims == (w, h, d) {
        return Ok(vol.clone());
    }

    let voxel_size = [
        vol.voxel_size[0] * w as f32 / new_dims.0 as f32,
        vol.voxel_size[1] * h as f32 / new_dims.1 as f32,
        vol.voxel_size[2] * d as f32 / new_dims.2 as f32,
    ];

    let mut out = Array3::<C32>::zeros(new_dims);
    let src = &vol.data;
    for i in 0..new_dims.0 {
        let (x0, x1, fx) = interp_axis(src_pos(i, w, new_dims.0), w);
        for j in 0..new_dims.1 {
            let (y0, y1, fy) = interp_axis(src_pos(j, h, new_dims.1), h);
            for k in 0..new_dims.2 {
                let (z0, z1, fz) = interp_axis(src_pos(k, d, new_dims.2), d);
                let c00 = src[[x0, y0, z0]] * (1.0 - fz) + src[[x0, y0, z1]] * fz;
                let c01 = src[[x0, y1, z0]] * (1.0 - fz) + src[[x0, y1, z1]] * fz;
                let c10 = src[[x1, y0, z0]] * (1.0 - fz) + src[[x1, y0, z1]] * fz;
                let c11 = src[[x1, y1, z0]] * (1.0 - fz) + src[[x1, y1, z1]] * fz;
                let c0 = c00 * (1.0 - fy) + c01 * fy;
                let c1 = c10 * (1.0 - fy) + c11 * fy;
                out[[i, j, k]] = c0 * (1.0 - fx) + c1 * fx;
            }
        }
    }

    ComplexVolume::new(out, voxel_size)
}
