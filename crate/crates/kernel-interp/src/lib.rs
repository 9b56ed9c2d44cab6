//! Resizing of trained depthwise convolution kernels to track a shifted
//! reconstruction pixel size: bilinear resampling, centered Fourier-domain
//! zero padding, and image-domain zero padding, each followed by an optional
//! DC-gain rescale so the response to constant inputs is preserved.

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, KernelError>;

fn invalid(msg: impl Into<String>) -> KernelError {
    KernelError::InvalidArgument(msg.into())
}

/// Per-channel spatial taps of one depthwise convolution layer, `[C, K, K]`
/// with odd `K`, plus the pixel size the taps were trained at.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseKernel {
    pub taps: Array3<f32>,
    /// In-plane (h, d) pixel size in mm the kernel grid was trained on.
    pub trained_pixel_size: [f32; 2],
}

impl DepthwiseKernel {
    pub fn new(taps: Array3<f32>, trained_pixel_size: [f32; 2]) -> Result<Self> {
        let (_, kh, kw) = taps.dim();
        if kh != kw {
            return Err(invalid(format!("kernel must be square, got {kh}x{kw}")));
        }
        if kh % 2 == 0 {
            return Err(invalid(format!("kernel size must be odd, got {kh}")));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(invalid("kernel taps must be finite"));
        }
        Ok(Self {
            taps,
            trained_pixel_size,
        })
    }

    pub fn size(&self) -> usize {
        self.taps.dim().1
    }

    pub fn channels(&self) -> usize {
        self.taps.dim().0
    }

    /// Per-channel tap sums (DC gains).
    pub fn dc_gains(&self) -> Vec<f32> {
        (0..self.channels())
            .map(|c| self.taps.index_axis(ndarray::Axis(0), c).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMethod {
    Bilinear,
    FourierZeroPad,
    ImageZeroPad,
}

impl InterpMethod {
    pub fn name(self) -> &'static str {
        match self {
            InterpMethod::Bilinear => "bilinear",
            InterpMethod::FourierZeroPad => "fourier_pad",
            InterpMethod::ImageZeroPad => "image_pad",
        }
    }
}

/// Result of one kernel resize, with enough metadata for run logs.
#[derive(Debug, Clone)]
pub struct ResizeOutcome {
    pub kernel: DepthwiseKernel,
    pub method: InterpMethod,
    pub k_from: usize,
    pub k_to: usize,
    /// Per-channel multiplier applied by the DC rescale (1.0 where skipped).
    pub gain_factors: Vec<f32>,
    /// Channels whose tap sum was below the rescale threshold.
    pub skipped_channels: Vec<usize>,
}

/// Target kernel size for a shift from training pixel size `v_train` to
/// reconstruction pixel size `v_recon`: the nearest odd integer to `K * r`
/// with `r = v_train / v_recon`, ties resolved upward, floored at 1.
/// Anisotropic ratios collapse to their geometric mean.
pub fn target_size(k: usize, v_train: [f32; 2], v_recon: [f32; 2]) -> Result<usize> {
    if k % 2 == 0 || k == 0 {
        return Err(invalid(format!("kernel size must be odd, got {k}")));
    }
    for v in v_train.iter().chain(v_recon.iter()) {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(invalid("pixel sizes must be positive"));
        }
    }
    let r = ((v_train[0] as f64 / v_recon[0] as f64) * (v_train[1] as f64 / v_recon[1] as f64))
        .sqrt();
    let x = k as f64 * r;
    // nearest odd integer, half-way cases upward
    let n = ((x - 1.0) / 2.0).round();
    let k_new = (2.0 * n + 1.0).max(1.0);
    Ok(k_new as usize)
}

fn bilinear_sample(taps: &ArrayView2<f64>, u: f64, v: f64) -> f64 {
    let k = taps.dim().0;
    let clamp = |x: f64| x.clamp(0.0, (k - 1) as f64);
    let (u, v) = (clamp(u), clamp(v));
    let (u0, v0) = (u.floor() as usize, v.floor() as usize);
    let (u1, v1) = ((u0 + 1).min(k - 1), (v0 + 1).min(k - 1));
    let (fu, fv) = (u - u0 as f64, v - v0 as f64);
    taps[[u0, v0]] * (1.0 - fu) * (1.0 - fv)
        + taps[[u1, v0]] * fu * (1.0 - fv)
        + taps[[u0, v1]] * (1.0 - fu) * fv
        + taps[[u1, v1]] * fu * fv
}

fn channel_f64(kernel: &DepthwiseKernel, c: usize) -> Array2<f64> {
    kernel
        .taps
        .index_axis(ndarray::Axis(0), c)
        .mapv(|t| t as f64)
}

fn resample_bilinear(ch: &Array2<f64>, k_new: usize) -> Array2<f64> {
    let k = ch.dim().0;
    // centered grid spanning the same footprint: K' samples between the
    // outermost tap centers
    let pos = |i: usize| {
        if k_new == 1 {
            (k as f64 - 1.0) / 2.0
        } else {
            i as f64 * (k as f64 - 1.0) / (k_new as f64 - 1.0)
        }
    };
    Array2::from_shape_fn((k_new, k_new), |(i, j)| {
        bilinear_sample(&ch.view(), pos(i), pos(j))
    })
}

/// Centered 2D DFT with frequency indices -m..=m, m = (K-1)/2.
fn centered_dft2(ch: &Array2<f64>) -> Array2<Complex64> {
    let k = ch.dim().0 as i64;
    let m = (k - 1) / 2;
    let mut out = Array2::<Complex64>::zeros(ch.raw_dim());
    for p in -m..=m {
        for q in -m..=m {
            let mut acc = Complex64::new(0.0, 0.0);
            for x in -m..=m {
                for y in -m..=m {
                    let ang = -std::f64::consts::TAU * (p * x + q * y) as f64 / k as f64;
                    let t = ch[[(x + m) as usize, (y + m) as usize]];
                    acc += Complex64::from_polar(t, ang);
                }
            }
            out[[(p + m) as usize, (q + m) as usize]] = acc;
        }
    }
    out
}

/// Evaluate the trigonometric interpolant encoded by a centered spectrum on
/// the centered grid of the spectrum's own size. `src_k` is the size the
/// spectrum was measured at; dividing by `src_k^2` keeps tap amplitudes.
fn centered_idft2(spec: &Array2<Complex64>, src_k: usize) -> Array2<f64> {
    let k = spec.dim().0 as i64;
    let m = (k - 1) / 2;
    let norm = 1.0 / (src_k * src_k) as f64;
    let mut out = Array2::<f64>::zeros(spec.raw_dim());
    for x in -m..=m {
        for y in -m..=m {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in -m..=m {
                for q in -m..=m {
                    let ang = std::f64::consts::TAU * (p * x + q * y) as f64 / k as f64;
                    acc += spec[[(p + m) as usize, (q + m) as usize]]
                        * Complex64::from_polar(1.0, ang);
                }
            }
            out[[(x + m) as usize, (y + m) as usize]] = acc.re * norm;
        }
    }
    out
}

fn pad_or_crop_centered<T: Clone + Default>(a: &Array2<T>, k_new: usize) -> Array2<T> {
    let k = a.dim().0;
    let mut out = Array2::<T>::from_elem((k_new, k_new), T::default());
    let copy = k.min(k_new);
    let src0 = (k - copy) / 2;
    let dst0 = (k_new - copy) / 2;
    for i in 0..copy {
        for j in 0..copy {
            out[[dst0 + i, dst0 + j]] = a[[src0 + i, src0 + j]].clone();
        }
    }
    out
}

fn resample_fourier(ch: &Array2<f64>, k_new: usize) -> Array2<f64> {
    let k = ch.dim().0;
    let spec = centered_dft2(ch);
    let spec2 = pad_or_crop_centered(&spec, k_new);
    centered_idft2(&spec2, k)
}

fn resample_image_pad(ch: &Array2<f64>, k_new: usize) -> Array2<f64> {
    pad_or_crop_centered(ch, k_new)
}

fn check_target(k_new: usize) -> Result<()> {
    if k_new == 0 || k_new % 2 == 0 {
        return Err(invalid(format!("target size must be odd, got {k_new}")));
    }
    Ok(())
}

/// Tap sums below this are treated as zero-DC kernels and left unscaled.
pub const DC_RESCALE_EPS: f64 = 1e-12;

fn assemble(
    kernel: &DepthwiseKernel,
    k_new: usize,
    method: InterpMethod,
    preserve_dc: bool,
    resample: impl Fn(&Array2<f64>, usize) -> Array2<f64>,
) -> Result<ResizeOutcome> {
    check_target(k_new)?;
    let c = kernel.channels();
    let mut taps = Array3::<f32>::zeros((c, k_new, k_new));
    let mut gain_factors = vec![1.0f32; c];
    let mut skipped = Vec::new();
    for ci in 0..c {
        let ch = channel_f64(kernel, ci);
        let target_gain = ch.sum();
        let mut resized = if k_new == kernel.size() && method == InterpMethod::FourierZeroPad {
            ch.clone() // exact identity rather than a DFT round trip
        } else {
            resample(&ch, k_new)
        };
        if preserve_dc {
            let sum = resized.sum();
            if sum.abs() > DC_RESCALE_EPS && target_gain.abs() > DC_RESCALE_EPS {
                let f = target_gain / sum;
                resized.mapv_inplace(|t| t * f);
                gain_factors[ci] = f as f32;
            } else {
                skipped.push(ci);
            }
        }
        for i in 0..k_new {
            for j in 0..k_new {
                taps[[ci, i, j]] = resized[[i, j]] as f32;
            }
        }
    }
    Ok(ResizeOutcome {
        kernel: DepthwiseKernel::new(taps, kernel.trained_pixel_size)?,
        method,
        k_from: kernel.size(),
        k_to: k_new,
        gain_factors,
        skipped_channels: skipped,
    })
}

/// Resize by sampling the continuous bilinear interpolant of the taps on a
/// centered grid spanning the same footprint, then DC-rescale.
pub fn interp_bilinear(kernel: &DepthwiseKernel, k_new: usize) -> Result<DepthwiseKernel> {
    resize_kernel(kernel, k_new, InterpMethod::Bilinear, true).map(|o| o.kernel)
}

/// Resize by centered zero padding (or cropping) of the centered 2D DFT of
/// the taps, then DC-rescale.
pub fn interp_fourier_zero_pad(kernel: &DepthwiseKernel, k_new: usize) -> Result<DepthwiseKernel> {
    resize_kernel(kernel, k_new, InterpMethod::FourierZeroPad, true).map(|o| o.kernel)
}

/// Resize by symmetric zero padding (or centered cropping) of the taps
/// themselves, then DC-rescale.
pub fn interp_image_zero_pad(kernel: &DepthwiseKernel, k_new: usize) -> Result<DepthwiseKernel> {
    resize_kernel(kernel, k_new, InterpMethod::ImageZeroPad, true).map(|o| o.kernel)
}

/// Full-control entry point; `preserve_dc = false` turns the rescale off
/// for ablations.
pub fn resize_kernel(
    kernel: &DepthwiseKernel,
    k_new: usize,
    method: InterpMethod,
    preserve_dc: bool,
) -> Result<ResizeOutcome> {
    match method {
        InterpMethod::Bilinear => assemble(kernel, k_new, method, preserve_dc, resample_bilinear),
        InterpMethod::FourierZeroPad => {
            assemble(kernel, k_new, method, preserve_dc, resample_fourier)
        }
        InterpMethod::ImageZeroPad => {
            assemble(kernel, k_new, method, preserve_dc, resample_image_pad)
        }
    }
}

/// Pre-rescale resize, exposed for oracles and ablation studies.
pub fn resize_kernel_raw(
    kernel: &DepthwiseKernel,
    k_new: usize,
    method: InterpMethod,
) -> Result<DepthwiseKernel> {
    resize_kernel(kernel, k_new, method, false).map(|o| o.kernel)
}

/// Scale taps so each channel's tap sum equals `target_gain`. Channels with
/// near-zero tap sum are left unchanged and reported (zero-DC kernels are
/// legitimate edge detectors).
pub fn rescale_dc(kernel: &DepthwiseKernel, target_gain: f32) -> (DepthwiseKernel, Vec<usize>) {
    let mut out = kernel.clone();
    let mut skipped = Vec::new();
    for c in 0..kernel.channels() {
        let mut ch = out.taps.index_axis_mut(ndarray::Axis(0), c);
        let sum = ch.iter().map(|&t| t as f64).sum::<f64>();
        if sum.abs() <= DC_RESCALE_EPS {
            skipped.push(c);
            continue;
        }
        let f = (target_gain as f64 / sum) as f32;
        ch.mapv_inplace(|t| t * f);
    }
    (out, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn kernel_from(vals: &[f32], k: usize) -> DepthwiseKernel {
        let taps = Array3::from_shape_vec((1, k, k), vals.to_vec()).unwrap();
        DepthwiseKernel::new(taps, [1.0, 1.0]).unwrap()
    }

    fn ramp_kernel(k: usize, a: f64, b: f64, c: f64) -> DepthwiseKernel {
        let m = (k as f64 - 1.0) / 2.0;
        let mut vals = Vec::new();
        for i in 0..k {
            for j in 0..k {
                vals.push((a + b * (i as f64 - m) + c * (j as f64 - m)) as f32);
            }
        }
        kernel_from(&vals, k)
    }

    #[test]
    fn target_size_rules() {
        assert_eq!(target_size(7, [1.0, 1.0], [1.0, 1.0]).unwrap(), 7);
        // K*r = 14, equidistant odd neighbors 13/15, tie upward
        assert_eq!(target_size(7, [2.0, 2.0], [1.0, 1.0]).unwrap(), 15);
        // K*r = 4.5 -> 5
        assert_eq!(target_size(9, [1.0, 1.0], [2.0, 2.0]).unwrap(), 5);
        assert!(target_size(8, [1.0, 1.0], [1.0, 1.0]).is_err());
        // geometric mean of anisotropic ratios
        assert_eq!(target_size(7, [2.0, 8.0], [2.0, 2.0]).unwrap(), 15);
    }

    #[test]
    fn target_size_monotone_in_ratio() {
        let mut last = 0;
        for r in [0.25f32, 0.5, 1.0, 1.5, 2.0, 3.0] {
            let k = target_size(7, [r, r], [1.0, 1.0]).unwrap();
            assert!(k >= last);
            last = k;
        }
    }

    #[test]
    fn bilinear_identity_and_ramp() {
        let k = ramp_kernel(3, 0.5, 0.25, -0.125);
        let same = resize_kernel_raw(&k, 3, InterpMethod::Bilinear).unwrap();
        assert_eq!(same.taps, k.taps);
        // 3 -> 5 on a ramp matches the analytic samples before rescale
        let up = resize_kernel_raw(&k, 5, InterpMethod::Bilinear).unwrap();
        let expect = |i: f64, j: f64| 0.5 + 0.25 * (i - 2.0) * 0.5 + -0.125 * (j - 2.0) * 0.5;
        for i in 0..5 {
            for j in 0..5 {
                let e = expect(i as f64, j as f64);
                let g = up.taps[[0, i, j]] as f64;
                assert!((g - e).abs() < 1e-6, "({i},{j}): {g} vs {e}");
            }
        }
    }

    #[test]
    fn constant_kernel_keeps_dc_gain() {
        let k = kernel_from(&[0.4; 9], 3);
        for method in [
            InterpMethod::Bilinear,
            InterpMethod::FourierZeroPad,
            InterpMethod::ImageZeroPad,
        ] {
            let o = resize_kernel(&k, 5, method, true).unwrap();
            let sum: f32 = o.kernel.taps.sum();
            assert!((sum - 3.6).abs() < 1e-5, "{method:?}: sum {sum}");
            if method != InterpMethod::ImageZeroPad {
                // interpolation of a constant stays constant
                let first = o.kernel.taps[[0, 0, 0]];
                for &t in o.kernel.taps.iter() {
                    assert!((t - first).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn fourier_identity_exact() {
        let k = ramp_kernel(5, 0.1, 0.3, -0.2);
        let same = resize_kernel_raw(&k, 5, InterpMethod::FourierZeroPad).unwrap();
        for (a, b) in same.taps.iter().zip(k.taps.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fourier_up_then_crop_round_trips() {
        let vals: Vec<f32> = (0..25).map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.13).collect();
        let k = kernel_from(&vals, 5);
        let up = resize_kernel_raw(&k, 9, InterpMethod::FourierZeroPad).unwrap();
        let back = resize_kernel_raw(&up, 5, InterpMethod::FourierZeroPad).unwrap();
        for (a, b) in back.taps.iter().zip(k.taps.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn fourier_padding_preserves_low_spectrum() {
        // Raw padding scales every coefficient by K'^2/K^2; the DC rescale
        // cancels that for non-zero-DC kernels, so the padded kernel's low
        // spectrum matches the original exactly.
        let vals: Vec<f32> = (0..9).map(|i| (i as f32 * 0.7).sin() + 0.5).collect();
        let k = kernel_from(&vals, 3);
        let up = interp_fourier_zero_pad(&k, 7).unwrap();
        let f_orig = centered_dft2(&channel_f64(&k, 0));
        let f_up = centered_dft2(&channel_f64(&up, 0));
        for p in 0..3 {
            for q in 0..3 {
                let a = f_orig[[p, q]];
                let got = f_up[[p + 2, q + 2]];
                assert!((a - got).norm() < 1e-6, "({p},{q}): {a} vs {got}");
            }
        }
        // and the raw version matches up to that single scalar
        let raw = resize_kernel_raw(&k, 7, InterpMethod::FourierZeroPad).unwrap();
        let f_raw = centered_dft2(&channel_f64(&raw, 0));
        for p in 0..3 {
            for q in 0..3 {
                let a = f_orig[[p, q]] * (49.0 / 9.0);
                let got = f_raw[[p + 2, q + 2]];
                assert!((a - got).norm() < 1e-6, "({p},{q}): {a} vs {got}");
            }
        }
    }

    #[test]
    fn image_pad_moves_nothing() {
        let mut vals = vec![0.0f32; 9];
        vals[4] = 1.0; // delta at center
        let k = kernel_from(&vals, 3);
        let up = resize_kernel_raw(&k, 5, InterpMethod::ImageZeroPad).unwrap();
        assert_eq!(up.taps[[0, 2, 2]], 1.0);
        let sum: f32 = up.taps.sum();
        assert_eq!(sum, 1.0);
    }

    #[test]
    fn image_crop_loses_outer_mass() {
        let mut vals = vec![0.1f32; 25];
        vals[0] = 2.0; // mass in the corner, outside the center 3x3
        let k = kernel_from(&vals, 5);
        let down = resize_kernel_raw(&k, 3, InterpMethod::ImageZeroPad).unwrap();
        let sum: f32 = down.taps.sum();
        assert!((sum - 0.9).abs() < 1e-6, "sum {sum}");
    }

    #[test]
    fn rescale_dc_halves_a_double_gain_kernel() {
        let k = kernel_from(&[2.0 / 9.0; 9], 3);
        let (r, skipped) = rescale_dc(&k, 1.0);
        assert!(skipped.is_empty());
        let sum: f32 = r.taps.sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rescale_dc_skips_zero_sum_kernels() {
        let vals = [1.0f32, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let k = kernel_from(&vals, 3);
        let (r, skipped) = rescale_dc(&k, 1.0);
        assert_eq!(skipped, vec![0]);
        assert_eq!(r.taps, k.taps);
    }

    #[test]
    fn even_target_rejected_and_outputs_finite() {
        let k = ramp_kernel(3, 0.2, 0.1, 0.1);
        assert!(resize_kernel_raw(&k, 4, InterpMethod::Bilinear).is_err());
        for method in [
            InterpMethod::Bilinear,
            InterpMethod::FourierZeroPad,
            InterpMethod::ImageZeroPad,
        ] {
            for k_new in [1usize, 3, 5, 9, 15] {
                let o = resize_kernel(&k, k_new, method, true).unwrap();
                assert_eq!(o.kernel.size(), k_new);
                assert!(o.kernel.taps.iter().all(|t| t.is_finite()));
            }
        }
    }
}
