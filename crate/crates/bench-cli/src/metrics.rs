use ndarray::Array2;

use volume_core::ComplexVolume;

use crate::{BenchError, Result};

/// Peak signal-to-noise ratio on voxel magnitudes, with the peak defined as
/// the reference's maximum magnitude. Identical inputs are flagged rather
/// than reported as infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    /// Numeric value for ordering; identical volumes rank above any finite dB.
    pub fn db_or(&self, cap: f64) -> f64 {
        match self {
            Psnr::Db(v) => *v,
            Psnr::Identical => cap,
        }
    }
}

pub fn psnr(recon: &ComplexVolume, reference: &ComplexVolume) -> Result<Psnr> {
    if recon.dims() != reference.dims() {
        return Err(BenchError::invalid(format!(
            "dims {:?} vs {:?} differ",
            recon.dims(),
            reference.dims()
        )));
    }
    let mut mse = 0.0f64;
    let mut peak = 0.0f64;
    for (a, b) in recon.data.iter().zip(reference.data.iter()) {
        let d = a.norm() as f64 - b.norm() as f64;
        mse += d * d;
        peak = peak.max(b.norm() as f64);
    }
    mse /= recon.data.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr::Identical);
    }
    if peak == 0.0 {
        return Err(BenchError::invalid("reference volume is all zero"));
    }
    Ok(Psnr::Db(10.0 * (peak * peak / mse).log10()))
}

const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Separable 7x7 Gaussian blur with reflected borders.
fn blur(img: &Array2<f64>) -> Array2<f64> {
    let w = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let (h, d) = img.dim();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i as usize
    };
    let mut tmp = Array2::<f64>::zeros((h, d));
    for i in 0..h {
        for j in 0..d {
            let mut acc = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let jj = reflect(j as isize + k as isize - half as isize, d);
                acc += wk * img[[i, jj]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, d));
    for i in 0..h {
        for j in 0..d {
            let mut acc = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let ii = reflect(i as isize + k as isize - half as isize, h);
                acc += wk * tmp[[ii, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn ssim_slice(x: &Array2<f64>, y: &Array2<f64>, dynamic_range: f64) -> f64 {
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let mu_x = blur(x);
    let mu_y = blur(y);
    let xx = blur(&(x * x));
    let yy = blur(&(y * y));
    let xy = blur(&(x * y));
    let mut acc = 0.0;
    let n = x.len() as f64;
    for ((i, j), &mx) in mu_x.indexed_iter() {
        let my = mu_y[[i, j]];
        let vx = xx[[i, j]] - mx * mx;
        let vy = yy[[i, j]] - my * my;
        let cxy = xy[[i, j]] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    acc / n
}

/// Structural similarity of voxel magnitudes, computed per sagittal slice
/// and averaged; 7x7 Gaussian window (sigma 1.5), k1 = 0.01, k2 = 0.03,
/// dynamic range from the reference's peak magnitude.
pub fn ssim_sagittal_avg(recon: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    if recon.dims() != reference.dims() {
        return Err(BenchError::invalid(format!(
            "dims {:?} vs {:?} differ",
            recon.dims(),
            reference.dims()
        )));
    }
    let peak = reference
        .data
        .iter()
        .map(|z| z.norm() as f64)
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(BenchError::invalid("reference volume is all zero"));
    }
    let (w, h, d) = recon.dims();
    let mut acc = 0.0;
    for s in 0..w {
        let xs = Array2::from_shape_fn((h, d), |(i, j)| recon.data[[s, i, j]].norm() as f64);
        let ys = Array2::from_shape_fn((h, d), |(i, j)| reference.data[[s, i, j]].norm() as f64);
        acc += ssim_slice(&xs, &ys, peak);
    }
    Ok(acc / w as f64)
}
