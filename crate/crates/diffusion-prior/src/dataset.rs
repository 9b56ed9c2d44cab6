use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use volume_core::{trilinear_downsample, ComplexVolume, Plane, C32};

use crate::{PriorError, Result};

/// One complex 2D training slice with its provenance.
#[derive(Debug, Clone)]
pub struct Slice2D {
    pub data: Array2<C32>,
    pub plane: Plane,
    /// In-plane (row, column) pixel size in mm.
    pub pixel_size: [f32; 2],
    pub volume_id: usize,
    pub index: usize,
}

/// A flat collection of slices sampled uniformly during training.
#[derive(Debug, Clone, Default)]
pub struct SliceDataset {
    pub slices: Vec<Slice2D>,
}

impl SliceDataset {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Distinct in-plane pixel sizes present, for checkpoint metadata.
    pub fn pixel_sizes(&self) -> Vec<[f32; 2]> {
        let mut seen: Vec<[f32; 2]> = Vec::new();
        for s in &self.slices {
            if !seen
                .iter()
                .any(|p| (p[0] - s.pixel_size[0]).abs() < 1e-6 && (p[1] - s.pixel_size[1]).abs() < 1e-6)
            {
                seen.push(s.pixel_size);
            }
        }
        seen
    }
}

/// Standard deviation of voxel magnitudes over the whole volume.
pub fn magnitude_std(vol: &ComplexVolume) -> f64 {
    let n = vol.data.len() as f64;
    let mags: Vec<f64> = vol.data.iter().map(|z| z.norm() as f64).collect();
    let mean = mags.iter().sum::<f64>() / n;
    (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Divide by the volume-level magnitude std so slice statistics match the
/// variance-1 convention of the reconstruction.
pub fn normalize_volume(vol: &ComplexVolume) -> Result<ComplexVolume> {
    let std = magnitude_std(vol);
    if !(std > 0.0) {
        return Err(PriorError::invalid("volume has zero magnitude variance"));
    }
    Ok(vol.scale((1.0 / std) as f32))
}

fn slice_at(vol: &ComplexVolume, plane: Plane, index: usize) -> Array2<C32> {
    vol.data.index_axis(Axis(plane.fixed_axis()), index).to_owned()
}

fn in_plane_pixel_size(voxel_size: [f32; 3], plane: Plane) -> [f32; 2] {
    let (a, b) = plane.in_plane_axes();
    [voxel_size[a], voxel_size[b]]
}

/// Cut every slice along the requested planes out of each volume, after
/// per-volume magnitude normalization.
pub fn extract_slices(volumes: &[ComplexVolume], planes: &[Plane]) -> Result<SliceDataset> {
    if volumes.is_empty() {
        return Err(PriorError::invalid("need at least one volume"));
    }
    if planes.is_empty() {
        return Err(PriorError::invalid("need at least one plane"));
    }
    let mut slices = Vec::new();
    for (vid, vol) in volumes.iter().enumerate() {
        let vol = normalize_volume(vol)?;
        for &plane in planes {
            let extent = match plane {
                Plane::Sagittal => vol.dims().0,
                Plane::Coronal => vol.dims().1,
                Plane::Axial => vol.dims().2,
            };
            for index in 0..extent {
                slices.push(Slice2D {
                    data: slice_at(&vol, plane, index),
                    plane,
                    pixel_size: in_plane_pixel_size(vol.voxel_size, plane),
                    volume_id: vid,
                    index,
                });
            }
        }
    }
    Ok(SliceDataset { slices })
}

/// Resolution-diversity augmentation: resample with a factor drawn from
/// U[0.1, 1.0], raised so no axis drops below 8 cells. FOV is preserved;
/// voxel size grows by the inverse factor.
pub fn augment_diverse(vol: &ComplexVolume, rng: &mut impl Rng) -> ComplexVolume {
    let dims = vol.dims();
    let min_dim = dims.0.min(dims.1).min(dims.2) as f64;
    // keep every axis at >= 8 cells after rounding
    let floor = (8.0 / min_dim).min(1.0);
    let mut factor: f64 = rng.gen_range(0.1..1.0);
    if factor < floor {
        factor = floor;
    }
    trilinear_downsample(vol, factor).expect("factor within (0, 1]")
}

/// Where training slices come from: a fixed pre-sliced dataset or
/// per-draw diverse-resolution resampling of source volumes.
pub enum SliceSource {
    Static(SliceDataset),
    Diverse { volumes: Vec<ComplexVolume> },
}

impl SliceSource {
    pub fn diverse(volumes: Vec<ComplexVolume>) -> Result<Self> {
        if volumes.is_empty() {
            return Err(PriorError::invalid("need at least one volume"));
        }
        Ok(SliceSource::Diverse { volumes })
    }

    pub fn is_diverse(&self) -> bool {
        matches!(self, SliceSource::Diverse { .. })
    }

    pub fn is_empty(&self) -> bool {
        match self {
            SliceSource::Static(d) => d.is_empty(),
            SliceSource::Diverse { volumes } => volumes.is_empty(),
        }
    }

    /// Draw one training slice.
    pub fn sample(&self, rng: &mut impl Rng) -> Slice2D {
        match self {
            SliceSource::Static(d) => {
                let i = rng.gen_range(0..d.slices.len());
                d.slices[i].clone()
            }
            SliceSource::Diverse { volumes } => {
                let vid = rng.gen_range(0..volumes.len());
                let resampled = augment_diverse(&volumes[vid], rng);
                let resampled = normalize_volume(&resampled).expect("non-degenerate volume");
                let plane = Plane::ALL[rng.gen_range(0..3)];
                let extent = match plane {
                    Plane::Sagittal => resampled.dims().0,
                    Plane::Coronal => resampled.dims().1,
                    Plane::Axial => resampled.dims().2,
                };
                let index = rng.gen_range(0..extent);
                Slice2D {
                    data: slice_at(&resampled, plane, index),
                    plane,
                    pixel_size: in_plane_pixel_size(resampled.voxel_size, plane),
                    volume_id: vid,
                    index,
                }
            }
        }
    }

    /// Pixel sizes reported into checkpoint metadata.
    pub fn pixel_sizes(&self) -> Vec<[f32; 2]> {
        match self {
            SliceSource::Static(d) => d.pixel_sizes(),
            SliceSource::Diverse { volumes } => volumes
                .iter()
                .map(|v| in_plane_pixel_size(v.voxel_size, Plane::Sagittal))
                .collect(),
        }
    }
}

/// Complex slice to two-channel (re, im) planes.
pub fn to_two_channel(slice: &Array2<C32>) -> Array3<f32> {
    let (h, w) = slice.dim();
    let mut out = Array3::<f32>::zeros((2, h, w));
    for ((i, j), z) in slice.indexed_iter() {
        out[[0, i, j]] = z.re;
        out[[1, i, j]] = z.im;
    }
    out
}

pub fn from_two_channel(t: &ndarray::ArrayView3<f32>) -> Array2<C32> {
    let (_, h, w) = t.dim();
    Array2::from_shape_fn((h, w), |(i, j)| C32::new(t[[0, i, j]], t[[1, i, j]]))
}
