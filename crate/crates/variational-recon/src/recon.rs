use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use diffusion_prior::nn::Tensor4;
use diffusion_prior::{Checkpoint, EpsModel, NoiseSchedule};
use kernel_interp::{resize_kernel, target_size, InterpMethod};
use sampling_forward::{adjoint, forward, MulticoilKSpace};
use volume_core::{make_mesh3_with_spacing, CoilSensitivities, ComplexVolume, C32};

use crate::backend::ReprBackend;
use crate::config::{KernelInterpChoice, ReconConfig, Representation};
use crate::gradient::reg_gradient;
use crate::slabs::{extract_plane_slices, sample_slabs, scatter_plane_slices, slab_indices};
use crate::{ReconError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct KernelResizeLog {
    pub site: usize,
    pub k_from: usize,
    pub k_to: usize,
    pub method: String,
    pub mean_gain_factor: f32,
    pub skipped_channels: usize,
}

/// Trace of one reconstruction run, serialized as `run.json` by callers.
#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub backend: String,
    pub config: ReconConfig,
    pub dc_loss: Vec<f64>,
    pub reg_loss: Vec<f64>,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
    pub kernel_resizes: Vec<KernelResizeLog>,
    /// Count of data-consistency increases after warm-up on lambda = 0 runs.
    pub dc_monotonicity_violations: usize,
    pub measurement_scale: f32,
}

/// Gradient of the data-consistency term `sum_i |y_i - M F S_i x|^2`
/// w.r.t. x, together with the term's value.
pub fn dc_gradient(
    x: &Array3<C32>,
    voxel_size: [f32; 3],
    maps: &CoilSensitivities,
    ksp: &MulticoilKSpace,
) -> Result<(Array3<C32>, f64)> {
    let vol = ComplexVolume::new(x.clone(), voxel_size)?;
    let ax = forward(&vol, maps, &ksp.mask)?;
    let mut residual = ax;
    let mut dc_loss = 0.0f64;
    for (r, y) in residual.coils.iter_mut().zip(ksp.coils.iter()) {
        ndarray::Zip::from(r).and(y).for_each(|rv, &yv| {
            *rv -= yv;
            dc_loss += rv.norm_sqr() as f64;
        });
    }
    let back = adjoint(&residual, maps)?;
    Ok((back.data.mapv(|z| z * 2.0), dc_loss))
}

fn to_batch(slices: &[Array2<C32>]) -> Tensor4 {
    let (h, w) = slices[0].dim();
    let mut out = Tensor4::zeros((slices.len(), 2, h, w));
    for (n, s) in slices.iter().enumerate() {
        debug_assert_eq!(s.dim(), (h, w));
        for ((i, j), z) in s.indexed_iter() {
            out[[n, 0, i, j]] = z.re;
            out[[n, 1, i, j]] = z.im;
        }
    }
    out
}

fn batch_item_to_complex(batch: &Tensor4, n: usize) -> Array2<C32> {
    let item = batch.index_axis(Axis(0), n);
    let (_, h, w) = item.dim();
    Array2::from_shape_fn((h, w), |(i, j)| C32::new(item[[0, i, j]], item[[1, i, j]]))
}

/// Reconstruct from pre-scaled measurements using a trained checkpoint.
/// Builds the inference denoiser, installs resolution-adapted depthwise
/// kernels when requested, and logs the run.
pub fn reconstruct_variational(
    ksp: &MulticoilKSpace,
    maps: &CoilSensitivities,
    ckpt: Option<&Checkpoint>,
    cfg: &ReconConfig,
    backend: &mut dyn ReprBackend,
) -> Result<(ComplexVolume, RunLog)> {
    let mut warnings = Vec::new();
    let mut resizes = Vec::new();

    let (den, schedule) = match ckpt {
        None => {
            if cfg.lambda > 0.0 {
                return Err(ReconError::invalid(
                    "lambda > 0 requires a denoiser checkpoint",
                ));
            }
            (None, None)
        }
        Some(ckpt) => {
            let mut den = ckpt.eval_denoiser();
            // resolution bookkeeping: training pixel size vs slice pixel size
            let v_train = cfg
                .v_train_override
                .or_else(|| ckpt.config.train_voxel_sizes.first().copied());
            let v_recon_inplane = [ksp.voxel_size[1], ksp.voxel_size[2]];
            if let Some(vt) = v_train {
                let slice_pixel = match cfg.representation {
                    Representation::Voxel => v_recon_inplane,
                    _ => vt,
                };
                let rel = |a: f32, b: f32| (a - b).abs() / b.max(1e-6);
                if rel(slice_pixel[0], vt[0]) > 0.05 || rel(slice_pixel[1], vt[1]) > 0.05 {
                    warnings.push(format!(
                        "denoiser trained at {:?} mm but slices are fed at {:?} mm",
                        vt, slice_pixel
                    ));
                }
            }
            if cfg.kernel_interp != KernelInterpChoice::None {
                let method = match cfg.kernel_interp {
                    KernelInterpChoice::Bilinear => InterpMethod::Bilinear,
                    KernelInterpChoice::FourierPad => InterpMethod::FourierZeroPad,
                    KernelInterpChoice::ImagePad => InterpMethod::ImageZeroPad,
                    KernelInterpChoice::None => unreachable!(),
                };
                let kernels = den.depthwise_kernels().ok_or_else(|| {
                    ReconError::invalid("kernel interpolation requires an inf_unet checkpoint")
                })?;
                let mut resized = Vec::with_capacity(kernels.len());
                for (site, k) in kernels.iter().enumerate() {
                    let k_new = target_size(k.size(), k.trained_pixel_size, v_recon_inplane)?;
                    if k_new == k.size() {
                        warnings.push(format!(
                            "site {site}: target kernel size equals trained size {}, identity applied",
                            k.size()
                        ));
                    }
                    let out = resize_kernel(k, k_new, method, true)?;
                    resizes.push(KernelResizeLog {
                        site,
                        k_from: out.k_from,
                        k_to: out.k_to,
                        method: method.name().to_string(),
                        mean_gain_factor: out.gain_factors.iter().sum::<f32>()
                            / out.gain_factors.len().max(1) as f32,
                        skipped_channels: out.skipped_channels.len(),
                    });
                    resized.push(out.kernel);
                }
                den.set_overrides(Some(&resized))?;
            }
            let schedule = ckpt.schedule.clone();
            (Some(den), Some(schedule))
        }
    };

    reconstruct_core(
        ksp,
        maps,
        den.as_ref().map(|d| (d as &dyn EpsModel, schedule.as_ref().unwrap())),
        cfg,
        backend,
        warnings,
        resizes,
    )
}

/// Core loop, generic over the noise model so stubs can drive it in tests.
pub fn reconstruct_core(
    ksp: &MulticoilKSpace,
    maps: &CoilSensitivities,
    denoiser: Option<(&dyn EpsModel, &NoiseSchedule)>,
    cfg: &ReconConfig,
    backend: &mut dyn ReprBackend,
    mut warnings: Vec<String>,
    kernel_resizes: Vec<KernelResizeLog>,
) -> Result<(ComplexVolume, RunLog)> {
    let started = Instant::now();
    let dims = ksp.dims();
    let t_max = denoiser.map(|(_, s)| s.t_max).unwrap_or(usize::MAX);
    cfg.validate(t_max, dims)?;
    if cfg.lambda > 0.0 && denoiser.is_none() {
        return Err(ReconError::invalid("lambda > 0 requires a denoiser"));
    }

    let mesh3 = make_mesh3_with_spacing(dims, ksp.voxel_size)?;
    let vol_fov = [
        dims.0 as f32 * ksp.voxel_size[0],
        dims.1 as f32 * ksp.voxel_size[1],
        dims.2 as f32 * ksp.voxel_size[2],
    ];
    let v_train = cfg.v_train_override.unwrap_or([
        ksp.voxel_size[1],
        ksp.voxel_size[2],
    ]);

    // rough variance sanity on the zero-filled image
    {
        let zf = adjoint(ksp, maps)?;
        let std = diffusion_prior::magnitude_std(&zf);
        if !(0.2..=5.0).contains(&std) {
            warnings.push(format!(
                "zero-filled magnitude std {std:.3}; measurements look unscaled"
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dc_trace = Vec::with_capacity(cfg.iters);
    let mut reg_trace = Vec::with_capacity(cfg.iters);

    let total_slices = (3 * cfg.slices_per_plane) as f32;

    for iter in 0..cfg.iters {
        let theta_vol = backend.eval_volume(&mesh3)?;
        let (dc_grad, dc_loss) = dc_gradient(&theta_vol, ksp.voxel_size, maps, ksp)?;
        if !dc_loss.is_finite() {
            return Err(ReconError::OptimizationFailure {
                iter,
                what: format!("non-finite data-consistency loss {dc_loss}"),
            });
        }
        backend.zero_grad();
        backend.accum_grad_volume(&mesh3, &dc_grad)?;
        dc_trace.push(dc_loss);

        let mut reg_loss_iter = 0.0f64;
        if cfg.lambda > 0.0 {
            let (model, schedule) = denoiser.unwrap();
            let plan = sample_slabs(dims, cfg.slices_per_plane, cfg.slab_size, &mut rng)?;
            // per-slice gradients are averaged over the 3S slices so lambda
            // is insensitive to the slice budget
            let slice_scale = cfg.lambda / total_slices;
            match cfg.representation {
                Representation::Voxel => {
                    let mut acc = Array3::<C32>::zeros(dims);
                    for (plane, runs) in &plan.per_plane {
                        let indices = slab_indices(runs);
                        let slices = extract_plane_slices(&theta_vol, *plane, &indices);
                        let batch = to_batch(&slices);
                        let rg = reg_gradient(&batch, model, schedule, cfg.t_prime, &mut rng)?;
                        reg_loss_iter += rg.loss;
                        let grads: Vec<Array2<C32>> = (0..indices.len())
                            .map(|n| {
                                let mut g = batch_item_to_complex(&rg.grads, n);
                                g.mapv_inplace(|z| z * slice_scale);
                                g
                            })
                            .collect();
                        scatter_plane_slices(&mut acc, *plane, &indices, &grads);
                    }
                    backend.accum_grad_volume(&mesh3, &acc)?;
                }
                _ => {
                    for (plane, runs) in &plan.per_plane {
                        let indices = slab_indices(runs);
                        let extent = [dims.0, dims.1, dims.2][plane.fixed_axis()];
                        let positions: Vec<f32> = indices
                            .iter()
                            .map(|&i| -1.0 + (i as f32 + 0.5) * 2.0 / extent as f32)
                            .collect();
                        let meshes: Vec<_> = positions
                            .iter()
                            .map(|&pos| {
                                representations::make_mesh2_for_view(
                                    vol_fov, v_train, *plane, pos,
                                )
                            })
                            .collect::<std::result::Result<Vec<_>, _>>()?;
                        let slices: Vec<Array2<C32>> = meshes
                            .iter()
                            .map(|m| backend.eval_slice(m))
                            .collect::<Result<Vec<_>>>()?;
                        let batch = to_batch(&slices);
                        let rg = reg_gradient(&batch, model, schedule, cfg.t_prime, &mut rng)?;
                        reg_loss_iter += rg.loss;
                        for (n, mesh) in meshes.iter().enumerate() {
                            let mut g = batch_item_to_complex(&rg.grads, n);
                            g.mapv_inplace(|z| z * slice_scale);
                            backend.accum_grad_slice(mesh, &g)?;
                        }
                    }
                }
            }
            reg_loss_iter /= 3.0; // mean over the three plane batches
            if !reg_loss_iter.is_finite() {
                return Err(ReconError::OptimizationFailure {
                    iter,
                    what: format!("non-finite regularization loss {reg_loss_iter}"),
                });
            }
        }
        reg_trace.push(reg_loss_iter);

        backend.step(cfg.step_size);
    }

    // Loss-trace sanity on pure least-squares runs: past the warm-up the
    // data-consistency loss must not rebound above its running best by more
    // than optimizer chatter.
    let mut violations = 0usize;
    if cfg.lambda == 0.0 && dc_trace.len() > 10 {
        let mut best = dc_trace[10];
        for &v in &dc_trace[11..] {
            if v > 1.5 * best {
                violations += 1;
            }
            best = best.min(v);
        }
        if violations > 0 {
            warnings.push(format!(
                "data-consistency loss rebounded {violations} times after warm-up"
            ));
        }
    }

    let final_vol = backend.eval_volume(&mesh3)?;
    let unscale = 1.0 / ksp.scale;
    let out = ComplexVolume::new(final_vol.mapv(|z| z * unscale), ksp.voxel_size)?;

    let log = RunLog {
        backend: backend.name().to_string(),
        config: cfg.clone(),
        dc_loss: dc_trace,
        reg_loss: reg_trace,
        wall_seconds: started.elapsed().as_secs_f64(),
        warnings,
        kernel_resizes,
        dc_monotonicity_violations: violations,
        measurement_scale: ksp.scale,
    };
    Ok((out, log))
}
