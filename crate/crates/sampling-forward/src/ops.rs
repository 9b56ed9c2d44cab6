use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use volume_core::{CoilSensitivities, ComplexVolume, C32};

use crate::fft::{fft3_unitary, ifft3_unitary};
use crate::mask::SamplingMask;
use crate::{Result, SamplingError};

const MVUE_EPS: f32 = 1e-12;

/// Per-coil complex Fourier measurements with their sampling mask.
/// Entries outside the mask are exactly zero.
#[derive(Debug, Clone)]
pub struct MulticoilKSpace {
    pub coils: Vec<Array3<C32>>,
    pub mask: SamplingMask,
    pub noise_sigma: f32,
    /// Total multiplier applied to the raw data so far.
    pub scale: f32,
    /// Voxel size of the acquisition grid in mm.
    pub voxel_size: [f32; 3],
}

impl MulticoilKSpace {
    pub fn num_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.coils[0].dim()
    }
}

fn check_shapes(
    dims: (usize, usize, usize),
    maps: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<()> {
    if maps.dims() != dims {
        return Err(SamplingError::invalid(format!(
            "coil maps {:?} do not match volume {:?}",
            maps.dims(),
            dims
        )));
    }
    if mask.shape() != (dims.1, dims.2) {
        return Err(SamplingError::invalid(format!(
            "mask {:?} does not match phase-encode plane {:?}",
            mask.shape(),
            (dims.1, dims.2)
        )));
    }
    if mask.readout_len != 0 && mask.readout_len != dims.0 {
        return Err(SamplingError::invalid(format!(
            "mask readout length {} does not match W={}",
            mask.readout_len, dims.0
        )));
    }
    Ok(())
}

fn apply_mask(data: &mut Array3<C32>, pattern: &Array2<bool>) {
    let (w, h, d) = data.dim();
    for i in 0..w {
        for j in 0..h {
            for k in 0..d {
                if !pattern[[j, k]] {
                    data[[i, j, k]] = C32::new(0.0, 0.0);
                }
            }
        }
    }
    let _ = (h, d);
}

/// Noiseless multicoil measurement: per coil, multiply by the sensitivity,
/// apply the unitary 3D DFT, and zero out unmasked entries.
pub fn forward(
    vol: &ComplexVolume,
    maps: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<MulticoilKSpace> {
    let dims = vol.dims();
    check_shapes(dims, maps, mask)?;
    let coils: Vec<Array3<C32>> = maps
        .maps
        .par_iter()
        .map(|s| {
            let mut y = &vol.data * s;
            fft3_unitary(&mut y);
            apply_mask(&mut y, &mask.pattern);
            y
        })
        .collect();
    let mut bound = mask.clone();
    bound.readout_len = dims.0;
    Ok(MulticoilKSpace {
        coils,
        mask: bound,
        noise_sigma: 0.0,
        scale: 1.0,
        voxel_size: vol.voxel_size,
    })
}

/// Add complex Gaussian noise of standard deviation `sigma` on the masked
/// entries. Deterministic given `seed`.
pub fn add_noise(ksp: &mut MulticoilKSpace, sigma: f32, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comp_std = sigma / std::f32::consts::SQRT_2;
    let (w, _, _) = ksp.dims();
    let pattern = ksp.mask.pattern.clone();
    for coil in ksp.coils.iter_mut() {
        for i in 0..w {
            for ((j, k), &m) in pattern.indexed_iter() {
                if m {
                    let re: f32 = sample_normal(&mut rng);
                    let im: f32 = sample_normal(&mut rng);
                    coil[[i, j, k]] += C32::new(re * comp_std, im * comp_std);
                }
            }
        }
    }
    ksp.noise_sigma = sigma;
}

fn sample_normal(rng: &mut impl Rng) -> f32 {
    // Box-Muller on open intervals
    let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
    let u2: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Adjoint of `forward`: sum of conj(S_i) * IDFT(M * y_i).
pub fn adjoint(ksp: &MulticoilKSpace, maps: &CoilSensitivities) -> Result<ComplexVolume> {
    let dims = ksp.dims();
    check_shapes(dims, maps, &ksp.mask)?;
    let partial: Vec<Array3<C32>> = ksp
        .coils
        .par_iter()
        .zip(maps.maps.par_iter())
        .map(|(y, s)| {
            let mut img = y.clone();
            apply_mask(&mut img, &ksp.mask.pattern);
            ifft3_unitary(&mut img);
            img.zip_mut_with(s, |v, si| *v *= si.conj());
            img
        })
        .collect();
    let mut acc = Array3::<C32>::zeros(dims);
    for p in partial {
        acc += &p;
    }
    ComplexVolume::new(acc, ksp.voxel_size).map_err(Into::into)
}

/// Minimum-variance unbiased estimate from fully sampled k-space:
/// `sum_i conj(S_i) IDFT(y_i) / (sum_i |S_i|^2 + eps)`.
pub fn mvue(ksp_full: &MulticoilKSpace, maps: &CoilSensitivities) -> Result<ComplexVolume> {
    if !ksp_full.mask.is_full() {
        return Err(SamplingError::invalid(
            "MVUE reference requires fully sampled data",
        ));
    }
    let num = adjoint(ksp_full, maps)?;
    let rss_sq = maps.rss_squared();
    let mut data = num.data;
    data.zip_mut_with(&rss_sq, |v, &r| *v = *v / (r + MVUE_EPS));
    ComplexVolume::new(data, ksp_full.voxel_size).map_err(Into::into)
}

/// Rescale measurements so the zero-filled reconstruction has magnitude
/// standard deviation 1 over the well-sensed region. Returns the scaled
/// k-space and the applied factor.
pub fn scale_measurements(
    ksp: &MulticoilKSpace,
    maps: &CoilSensitivities,
) -> Result<(MulticoilKSpace, f32)> {
    let zf = adjoint(ksp, maps)?;
    let rss_sq = maps.rss_squared();
    let max_rss = rss_sq.iter().cloned().fold(0.0f32, f32::max);
    let mags: Vec<f64> = zf
        .data
        .iter()
        .zip(rss_sq.iter())
        .filter(|(_, &r)| r > 0.5 * max_rss)
        .map(|(z, _)| z.norm() as f64)
        .collect();
    let n = mags.len() as f64;
    if n == 0.0 {
        return Err(SamplingError::DegenerateInput(
            "no voxels above the sensitivity threshold".into(),
        ));
    }
    let mean = mags.iter().sum::<f64>() / n;
    let std = (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) {
        return Err(SamplingError::DegenerateInput(
            "zero-variance measurements cannot be scaled".into(),
        ));
    }
    let s = (1.0 / std) as f32;
    let mut out = ksp.clone();
    for c in out.coils.iter_mut() {
        c.mapv_inplace(|z| z * s);
    }
    out.scale = ksp.scale * s;
    Ok((out, s))
}
