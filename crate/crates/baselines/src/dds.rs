use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use diffusion_prior::nn::Tensor4;
use diffusion_prior::{Checkpoint, EpsModel};
use sampling_forward::{adjoint, forward, MulticoilKSpace};
use volume_core::{CoilSensitivities, ComplexVolume, C32};

use crate::{BaselineError, Result};

/// Settings of the decomposed-diffusion posterior sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Reverse steps on a subsampled schedule.
    pub n_steps: usize,
    /// Stochasticity of the transition, 0 (deterministic) to 1 (ancestral).
    pub eta: f64,
    pub cg_iters: usize,
    /// Proximal weight of the data-consistency solve.
    pub rho: f64,
    /// Every K-th reverse step skips data consistency.
    pub uncond_every: usize,
    /// Slice-axis cycle order over the volume axes.
    pub axis_order: [usize; 3],
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(n_steps: usize, uncond_every: usize, seed: u64) -> Self {
        Self {
            n_steps,
            eta: 0.85,
            cg_iters: 5,
            rho: 10.0,
            uncond_every,
            axis_order: [0, 1, 2],
            seed,
        }
    }

    fn validate(&self, t_max: usize) -> Result<()> {
        if self.n_steps == 0 || self.n_steps > t_max {
            return Err(BaselineError::invalid(format!(
                "n_steps {} outside [1, {t_max}]",
                self.n_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(BaselineError::invalid("eta must lie in [0, 1]"));
        }
        if !(self.rho > 0.0) {
            return Err(BaselineError::invalid("rho must be positive"));
        }
        if self.uncond_every == 0 || self.cg_iters == 0 {
            return Err(BaselineError::invalid(
                "uncond_every and cg_iters must be >= 1",
            ));
        }
        let mut sorted = self.axis_order;
        sorted.sort_unstable();
        if sorted != [0, 1, 2] {
            return Err(BaselineError::invalid("axis order must permute 0,1,2"));
        }
        Ok(())
    }
}

/// Approximately solve `argmin_x |y - Ax|^2 + rho |x - x0|^2` by conjugate
/// gradients on the normal equations, warm-started at `x0`. Returns the
/// solution and the final CG residual norm.
pub fn cg_data_consistency(
    x0_hat: &ComplexVolume,
    ksp: &MulticoilKSpace,
    maps: &CoilSensitivities,
    rho: f64,
    cg_iters: usize,
) -> Result<(ComplexVolume, f64)> {
    if !(rho > 0.0) {
        return Err(BaselineError::invalid("rho must be positive"));
    }
    let rho32 = rho as f32;
    let apply = |x: &Array3<C32>| -> Result<Array3<C32>> {
        let vol = ComplexVolume::new(x.clone(), x0_hat.voxel_size)?;
        let ax = forward(&vol, maps, &ksp.mask)?;
        let mut out = adjoint(&ax, maps)?.data;
        ndarray::Zip::from(&mut out).and(x).for_each(|o, &xv| {
            *o += xv * rho32;
        });
        Ok(out)
    };
    let dot = |a: &Array3<C32>, b: &Array3<C32>| -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x.conj() * y).re as f64)
            .sum()
    };

    // rhs = A^H y + rho x0
    let mut rhs = adjoint(ksp, maps)?.data;
    ndarray::Zip::from(&mut rhs)
        .and(&x0_hat.data)
        .for_each(|r, &x0| *r += x0 * rho32);

    let mut x = x0_hat.data.clone();
    let mut r = &rhs - &apply(&x)?;
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for _ in 0..cg_iters {
        if rs.sqrt() < 1e-12 {
            break;
        }
        let ap = apply(&p)?;
        let denom = dot(&p, &ap);
        if !denom.is_finite() || denom <= 0.0 {
            return Err(BaselineError::Numerical(format!(
                "CG breakdown: curvature {denom}"
            )));
        }
        let alpha = (rs / denom) as f32;
        ndarray::Zip::from(&mut x).and(&p).for_each(|x, &p| *x += p * alpha);
        ndarray::Zip::from(&mut r).and(&ap).for_each(|r, &ap| *r -= ap * alpha);
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(BaselineError::Numerical("CG residual diverged".into()));
        }
        let beta = (rs_new / rs) as f32;
        rs = rs_new;
        ndarray::Zip::from(&mut p).and(&r).for_each(|p, &r| *p = r + *p * beta);
    }
    Ok((
        ComplexVolume::new(x, x0_hat.voxel_size)?,
        rs.sqrt(),
    ))
}

fn volume_to_batch(vol: &Array3<C32>, axis: usize) -> Tensor4 {
    let n = vol.dim();
    let n_slices = [n.0, n.1, n.2][axis];
    let first = vol.index_axis(Axis(axis), 0);
    let (h, w) = first.dim();
    let mut out = Tensor4::zeros((n_slices, 2, h, w));
    for s in 0..n_slices {
        let sl = vol.index_axis(Axis(axis), s);
        for ((i, j), z) in sl.indexed_iter() {
            out[[s, 0, i, j]] = z.re;
            out[[s, 1, i, j]] = z.im;
        }
    }
    out
}

fn batch_to_volume(batch: &Tensor4, axis: usize, dims: (usize, usize, usize)) -> Array3<C32> {
    let mut vol = Array3::<C32>::zeros(dims);
    let n_slices = batch.dim().0;
    for s in 0..n_slices {
        let mut sl = vol.index_axis_mut(Axis(axis), s);
        let item = batch.index_axis(Axis(0), s);
        for ((i, j), z) in Array2::from_shape_fn(sl.dim(), |(i, j)| {
            C32::new(item[[0, i, j]], item[[1, i, j]])
        })
        .indexed_iter()
        {
            sl[(i, j)] = *z;
        }
    }
    vol
}

/// Posterior-sampling reconstruction: reverse diffusion on a subsampled
/// schedule, denoising slice-wise along a cycling axis, with a CG
/// data-consistency solve on the reassembled volume except on every K-th
/// (unconditional) step.
pub fn reconstruct_dds3d(
    ksp: &MulticoilKSpace,
    maps: &CoilSensitivities,
    ckpt: &Checkpoint,
    cfg: &SamplerConfig,
) -> Result<ComplexVolume> {
    let schedule = &ckpt.schedule;
    cfg.validate(schedule.t_max)?;
    let dims = ksp.dims();
    let den = ckpt.eval_denoiser();

    // ascending subsampled timesteps
    let taus: Vec<usize> = (0..cfg.n_steps)
        .map(|k| (k * schedule.t_max) / cfg.n_steps)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // unit-variance gaussian per real channel
    let mut normal = |shape: (usize, usize, usize)| -> Array3<C32> {
        Array3::from_shape_simple_fn(shape, || {
            let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
            let u2: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt();
            C32::new(r * u2.cos(), r * u2.sin())
        })
    };

    let mut x = normal(dims);

    for (step_idx, k) in (0..cfg.n_steps).rev().enumerate() {
        let t = taus[k];
        let alpha_bar_t = schedule.alpha_bar[t];
        let (alpha_t, sigma_t) = (schedule.alpha[t], schedule.sigma[t]);
        let axis = cfg.axis_order[step_idx % 3];

        let batch = volume_to_batch(&x, axis);
        let ts = vec![t; batch.dim().0];
        let eps_hat_b = den.predict_eps(&batch, &ts);
        let eps_hat = batch_to_volume(&eps_hat_b, axis, dims);

        // Tweedie estimate of the clean volume
        let mut x0 = x.clone();
        ndarray::Zip::from(&mut x0).and(&eps_hat).for_each(|x0, &e| {
            *x0 = (*x0 - e * sigma_t as f32) * (1.0 / alpha_t as f32);
        });

        let unconditional = (step_idx + 1) % cfg.uncond_every == 0;
        if !unconditional {
            let vol = ComplexVolume::new(x0, ksp.voxel_size)?;
            let (solved, _) = cg_data_consistency(&vol, ksp, maps, cfg.rho, cfg.cg_iters)?;
            x0 = solved.data;
        }

        let alpha_bar_prev = if k == 0 { 1.0 } else { schedule.alpha_bar[taus[k - 1]] };
        let sigma_prev_sq = 1.0 - alpha_bar_prev;
        let var = cfg.eta * cfg.eta
            * (sigma_prev_sq / (1.0 - alpha_bar_t))
            * (1.0 - alpha_bar_t / alpha_bar_prev);
        let var = var.max(0.0).min(sigma_prev_sq);
        let dir_coeff = (sigma_prev_sq - var).max(0.0).sqrt();
        let noise = if k == 0 || var == 0.0 {
            Array3::zeros(dims)
        } else {
            normal(dims)
        };
        let a_prev = alpha_bar_prev.sqrt() as f32;
        ndarray::Zip::from(&mut x)
            .and(&x0)
            .and(&eps_hat)
            .and(&noise)
            .for_each(|x, &x0, &e, &z| {
                *x = x0 * a_prev + e * dir_coeff as f32 + z * (var.sqrt() as f32);
            });
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(BaselineError::Numerical(format!(
                "sampler state diverged at reverse step {step_idx}"
            )));
        }
    }

    let unscale = 1.0 / ksp.scale;
    Ok(ComplexVolume::new(x.mapv(|z| z * unscale), ksp.voxel_size)?)
}

/// Axis visited at each reverse step; exposed for the cycling property test.
pub fn axis_cycle(cfg: &SamplerConfig, n_steps: usize) -> Vec<usize> {
    (0..n_steps).map(|i| cfg.axis_order[i % 3]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sampling_forward::SamplingMask;
    use volume_core::{generate_phantom, synth_coil_maps};

    fn full_setup(
        dims: (usize, usize, usize),
        coils: usize,
        seed: u64,
    ) -> (ComplexVolume, CoilSensitivities, MulticoilKSpace) {
        let x = generate_phantom(seed, dims, 5).unwrap();
        let maps = synth_coil_maps(dims, coils, seed + 7).unwrap();
        let mask = SamplingMask::full((dims.1, dims.2), dims.0);
        let ksp = forward(&x, &maps, &mask).unwrap();
        (x, maps, ksp)
    }

    #[test]
    fn huge_rho_pins_to_x0() {
        let dims = (8, 8, 8);
        let (x, maps, ksp) = full_setup(dims, 2, 1);
        let x0 = generate_phantom(9, dims, 4).unwrap();
        let (out, _) = cg_data_consistency(&x0, &ksp, &maps, 1e6, 10).unwrap();
        let rel = out.rel_err(&x0);
        assert!(rel < 1e-3, "rel {rel}");
        let _ = x;
    }

    #[test]
    fn tiny_rho_full_mask_recovers_mvue() {
        let dims = (10, 10, 10);
        let (_, maps, ksp) = full_setup(dims, 3, 2);
        let reference = sampling_forward::mvue(&ksp, &maps).unwrap();
        let x0 = ComplexVolume::zeros(dims, [1.0; 3]).unwrap();
        let (out, _) = cg_data_consistency(&x0, &ksp, &maps, 1e-6, 30).unwrap();
        let rel = out.rel_err(&reference);
        assert!(rel < 1e-3, "rel {rel}");
    }

    #[test]
    fn cg_objective_decreases_monotonically() {
        let dims = (8, 10, 8);
        let (_, maps, ksp) = full_setup(dims, 2, 3);
        let x0 = generate_phantom(4, dims, 4).unwrap();
        let objective = |x: &ComplexVolume| -> f64 {
            let ax = forward(x, &maps, &ksp.mask).unwrap();
            let mut obj = 0.0f64;
            for (a, y) in ax.coils.iter().zip(ksp.coils.iter()) {
                for (av, yv) in a.iter().zip(y.iter()) {
                    obj += (av - yv).norm_sqr() as f64;
                }
            }
            for (xv, x0v) in x.data.iter().zip(x0.data.iter()) {
                obj += 2.0 * (xv - x0v).norm_sqr() as f64;
            }
            obj
        };
        let mut last = objective(&x0);
        for iters in 1..8 {
            let (out, _) = cg_data_consistency(&x0, &ksp, &maps, 2.0, iters).unwrap();
            let obj = objective(&out);
            // 32-bit arithmetic leaves a little noise at the convergence floor
            assert!(
                obj <= last * (1.0 + 1e-7),
                "iters {iters}: {obj} > {last}"
            );
            last = obj;
        }
    }

    #[test]
    fn axis_cycle_is_balanced() {
        let cfg = SamplerConfig::new(12, 3, 0);
        let cycle = axis_cycle(&cfg, 12);
        for axis in 0..3 {
            assert_eq!(cycle.iter().filter(|&&a| a == axis).count(), 4);
        }
    }

    #[test]
    fn config_validation() {
        let t_max = 100;
        assert!(SamplerConfig::new(0, 3, 0).validate(t_max).is_err());
        assert!(SamplerConfig::new(101, 3, 0).validate(t_max).is_err());
        let mut c = SamplerConfig::new(10, 3, 0);
        c.eta = 1.5;
        assert!(c.validate(t_max).is_err());
        let mut c = SamplerConfig::new(10, 3, 0);
        c.axis_order = [0, 0, 2];
        assert!(c.validate(t_max).is_err());
        assert!(SamplerConfig::new(10, 3, 0).validate(t_max).is_ok());
    }
}
