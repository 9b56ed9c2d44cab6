use ndarray::Array3;

use crate::{Result, VolumeError, C32};

/// A complex 3D voxel array with its physical voxel size.
///
/// Data is indexed `[W, H, D]` with `D` fastest-varying. The field of view
/// is `dims * voxel_size` by construction and is never stored separately.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    pub data: Array3<C32>,
    /// Per-axis voxel size (w, h, d) in millimeters.
    pub voxel_size: [f32; 3],
}

impl ComplexVolume {
    pub fn new(data: Array3<C32>, voxel_size: [f32; 3]) -> Result<Self> {
        let dims = data.dim();
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(VolumeError::invalid(format!(
                "volume dims must all be >= 1, got {:?}",
                dims
            )));
        }
        if voxel_size.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(VolumeError::invalid(format!(
                "voxel size components must be positive, got {:?}",
                voxel_size
            )));
        }
        Ok(Self { data, voxel_size })
    }

    pub fn zeros(dims: (usize, usize, usize), voxel_size: [f32; 3]) -> Result<Self> {
        Self::new(Array3::zeros(dims), voxel_size)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Field of view in millimeters, exactly `dims * voxel_size` per axis.
    pub fn fov(&self) -> [f32; 3] {
        let (w, h, d) = self.dims();
        [
            w as f32 * self.voxel_size[0],
            h as f32 * self.voxel_size[1],
            d as f32 * self.voxel_size[2],
        ]
    }

    pub fn map(&self, f: impl Fn(C32) -> C32) -> Self {
        Self {
            data: self.data.mapv(&f),
            voxel_size: self.voxel_size,
        }
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|z| z * s)
    }

    /// Sum of |v|^2 over all voxels.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr() as f64).sum()
    }

    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Complex inner product `<self, other>` with conjugation on `self`.
    pub fn dot(&self, other: &Self) -> num_complex::Complex64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| {
                let p = a.conj() * b;
                num_complex::Complex64::new(p.re as f64, p.im as f64)
            })
            .sum()
    }

    /// Relative L2 distance `||self - other|| / ||other||`.
    pub fn rel_err(&self, other: &Self) -> f64 {
        let mut num = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            num += (a - b).norm_sqr() as f64;
        }
        let den = other.energy();
        if den == 0.0 {
            return if num == 0.0 { 0.0 } else { f64::INFINITY };
        }
        (num / den).sqrt()
    }
}
