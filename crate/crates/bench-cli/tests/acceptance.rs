//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line (run with `--nocapture` to see them as they complete). The
//! end-to-end criteria train small priors on the fly and are the slow part
//! of the workspace test run.

use std::sync::OnceLock;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use baselines::{reconstruct_dds3d, reconstruct_l1wavelet, soft_threshold_complex, SamplerConfig};
use bench_cli::metrics::{psnr, Psnr};
use diffusion_prior::model::{zero_stub, ConstStub};
use diffusion_prior::nn::Tensor4;
use diffusion_prior::train::{make_noisy, sample_std_normal};
use diffusion_prior::{
    build_schedule, extract_slices, train, Checkpoint, DenoiserConfig, EpsModel, SliceSource,
    TrainConfig,
};
use kernel_interp::{
    resize_kernel_raw, target_size, DepthwiseKernel, InterpMethod,
};
use representations::{
    rasterize_points_bruteforce64, resample_grid_mesh3, GaussianCloud, GaussianGrads, GridRepr,
    InterpMode, TRUNC_SIGMAS,
};
use sampling_forward::{
    adjoint, forward, gen_gaussian_mask, gen_poisson_mask, poisson_radius, scale_measurements,
    MaskKind, SamplingMask,
};
use variational_recon::{
    reconstruct_core, reconstruct_variational, reg_gradient, GridBackend, ReconConfig,
    Representation, ReprBackend, VoxelBackend,
};
use volume_core::{
    axis_coords, generate_phantom, make_mesh3, synth_coil_maps, trilinear_downsample,
    ComplexVolume, Plane, C32,
};

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion} [{name}]: {verdict} — {detail}");
    assert!(pass, "criterion {criterion} [{name}] FAILED — {detail}");
}

fn db(p: Psnr) -> f64 {
    p.db_or(200.0)
}

// ---------------------------------------------------------------- shared data

fn phantom32(seed: u64) -> ComplexVolume {
    generate_phantom(seed, (32, 32, 32), 10).unwrap()
}

struct SmallPriors {
    matched: Checkpoint,
    coarse: Checkpoint,
    diverse: Checkpoint,
}

/// Priors for the 32^3 shift experiments, trained once and shared.
fn small_priors() -> &'static SmallPriors {
    static PRIORS: OnceLock<SmallPriors> = OnceLock::new();
    PRIORS.get_or_init(|| {
        let schedule = build_schedule(1000, 0.0001, 0.02).unwrap();
        let config = DenoiserConfig::small();
        let train_vols: Vec<ComplexVolume> = (0..10).map(phantom32).collect();
        let coarse_vols: Vec<ComplexVolume> = train_vols
            .iter()
            .map(|v| trilinear_downsample(v, 0.5).unwrap())
            .collect();
        let steps = 1500;
        let t = |source: SliceSource, seed: u64| {
            train(
                &config,
                &source,
                &schedule,
                &TrainConfig {
                    steps,
                    seed,
                    ..TrainConfig::default()
                },
            )
            .unwrap()
            .checkpoint
        };
        SmallPriors {
            matched: t(
                SliceSource::Static(extract_slices(&train_vols, &Plane::ALL).unwrap()),
                0,
            ),
            coarse: t(
                SliceSource::Static(extract_slices(&coarse_vols, &Plane::ALL).unwrap()),
                1,
            ),
            diverse: t(SliceSource::diverse(train_vols).unwrap(), 2),
        }
    })
}

/// Simulate a pre-scaled acquisition of `gt` at acceleration `accel`.
fn simulate(
    gt: &ComplexVolume,
    coils: usize,
    accel: f64,
    seed: u64,
) -> (
    sampling_forward::MulticoilKSpace,
    volume_core::CoilSensitivities,
) {
    let dims = gt.dims();
    let maps = synth_coil_maps(dims, coils, 77).unwrap();
    let acs = ((dims.1 * 16) / 64).max(2);
    let mask = if accel <= 1.0 {
        SamplingMask::full((dims.1, dims.2), dims.0)
    } else {
        gen_poisson_mask((dims.1, dims.2), accel, (acs, acs), seed).unwrap()
    };
    let ksp = forward(gt, &maps, &mask).unwrap();
    let (ksp, _) = scale_measurements(&ksp, &maps).unwrap();
    (ksp, maps)
}

fn zero_filled(ksp: &sampling_forward::MulticoilKSpace, maps: &volume_core::CoilSensitivities) -> ComplexVolume {
    adjoint(ksp, maps).unwrap().scale(1.0 / ksp.scale)
}

fn variational(
    gt_dims: (usize, usize, usize),
    ksp: &sampling_forward::MulticoilKSpace,
    maps: &volume_core::CoilSensitivities,
    ckpt: &Checkpoint,
    tweak: impl Fn(ReconConfig) -> ReconConfig,
) -> ComplexVolume {
    let cfg = tweak(ReconConfig::new(0.05, 120, 0.05, 400, 9).with_slices(16, 4));
    let mut backend: Box<dyn ReprBackend> = match cfg.representation {
        Representation::GridResample => Box::new(GridBackend::zeros(
            gt_dims,
            InterpMode::Trilinear,
        )),
        _ => Box::new(VoxelBackend::zeros(gt_dims)),
    };
    let (vol, _) = reconstruct_variational(ksp, maps, Some(ckpt), &cfg, &mut *backend).unwrap();
    vol
}

// ---------------------------------------------------------------- criteria

#[test]
fn criterion_01_operator_adjoint_identity() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let dims = (
            rng.gen_range(16..=32usize),
            rng.gen_range(16..=32usize),
            rng.gen_range(16..=32usize),
        );
        let coils = rng.gen_range(1..=8usize);
        let maps = synth_coil_maps(dims, coils, i).unwrap();
        let mask = gen_poisson_mask((dims.1, dims.2), 3.0, (4, 4), i).unwrap();
        let x = ComplexVolume::new(
            Array3::from_shape_simple_fn(dims, || {
                C32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }),
            [1.0; 3],
        )
        .unwrap();
        let ax = forward(&x, &maps, &mask).unwrap();
        // random y supported on the mask
        let mut y = ax.clone();
        for c in y.coils.iter_mut() {
            c.mapv_inplace(|v| {
                if v == C32::new(0.0, 0.0) {
                    v
                } else {
                    C32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                }
            });
        }
        let aty = adjoint(&y, &maps).unwrap();
        let mut lhs = num_complex::Complex64::new(0.0, 0.0);
        let mut ax_sq = 0.0f64;
        let mut y_sq = 0.0f64;
        for (ca, cy) in ax.coils.iter().zip(y.coils.iter()) {
            for (a, b) in ca.iter().zip(cy.iter()) {
                let p = a.conj() * b;
                lhs += num_complex::Complex64::new(p.re as f64, p.im as f64);
                ax_sq += a.norm_sqr() as f64;
                y_sq += b.norm_sqr() as f64;
            }
        }
        let rhs = x.dot(&aty);
        let rel = (lhs - rhs).norm() / (ax_sq.sqrt() * y_sq.sqrt()).max(1e-30);
        worst = worst.max(rel);
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        1,
        "operator adjoint identity",
        worst < 1e-5 && elapsed < 10.0,
        &format!("worst rel err {worst:.3e} over 100 instances in {elapsed:.2}s"),
    );
}

/// Re-check of the Poisson spacing rule over every accepted non-ACS pair.
fn poisson_oracle_ok(mask: &SamplingMask) -> bool {
    let (r0, slope) = match mask.kind {
        MaskKind::Poisson { r0, slope } => (r0, slope),
        _ => return false,
    };
    let (h, d) = mask.shape();
    let (acs_h, acs_d) = mask.acs_ranges();
    let center = ((h as f64 - 1.0) / 2.0, (d as f64 - 1.0) / 2.0);
    let max_dist = (center.0.max(h as f64 - 1.0 - center.0).powi(2)
        + center.1.max(d as f64 - 1.0 - center.1).powi(2))
    .sqrt();
    let rho = |p: (usize, usize)| {
        let dy = p.0 as f64 - center.0;
        let dx = p.1 as f64 - center.1;
        (dy * dy + dx * dx).sqrt() / max_dist
    };
    let pts: Vec<(usize, usize)> = mask
        .pattern
        .indexed_iter()
        .filter(|&((y, x), &b)| b && !(acs_h.contains(&y) && acs_d.contains(&x)))
        .map(|((y, x), _)| (y, x))
        .collect();
    for (i, &p) in pts.iter().enumerate() {
        for &q in &pts[i + 1..] {
            let dy = p.0 as f64 - q.0 as f64;
            let dx = p.1 as f64 - q.1 as f64;
            let dist = (dy * dy + dx * dx).sqrt();
            let bound = poisson_radius(r0, slope, rho(p)).min(poisson_radius(r0, slope, rho(q)));
            if dist < bound {
                return false;
            }
        }
    }
    true
}

#[test]
fn criterion_02_mask_calibration() {
    let mut details = Vec::new();
    let mut ok = true;
    for &r in &[4.0f64, 8.0, 12.0, 24.0, 48.0] {
        for seed in 0..5u64 {
            let p = gen_poisson_mask((128, 128), r, (16, 16), seed).unwrap();
            let g = gen_gaussian_mask((128, 128), r, (16, 16), seed).unwrap();
            for (kind, m) in [("poisson", &p), ("gaussian", &g)] {
                let rel = (m.achieved_r - r).abs() / r;
                if rel > 0.10 {
                    ok = false;
                    details.push(format!("{kind} R={r} seed {seed}: achieved {:.2}", m.achieved_r));
                }
            }
        }
    }
    // spacing oracle on a representative subset
    for &(r, seed) in &[(4.0, 0u64), (8.0, 1), (24.0, 2), (48.0, 3)] {
        let m = gen_poisson_mask((128, 128), r, (16, 16), seed).unwrap();
        if !poisson_oracle_ok(&m) {
            ok = false;
            details.push(format!("spacing oracle failed at R={r} seed {seed}"));
        }
    }
    report(
        2,
        "mask calibration",
        ok,
        &if details.is_empty() {
            "achieved R within 10% for R in {4,8,12,24,48} x 5 seeds, both kinds; spacing oracle clean".to_string()
        } else {
            details.join("; ")
        },
    );
}

#[test]
fn criterion_03_schedule_identity() {
    let s = build_schedule(1000, 0.0001, 0.02).unwrap();
    let mut worst = 0.0f64;
    for t in 0..s.t_max {
        let mut prod = 1.0f64;
        for u in 0..=t {
            prod *= 1.0 - s.beta[u];
        }
        worst = worst.max((s.sigma[t] * s.sigma[t] - (1.0 - prod)).abs());
    }
    report(
        3,
        "schedule identity",
        worst < 1e-9,
        &format!("max |sigma_t^2 - (1 - prod)| = {worst:.3e} at T=1000"),
    );
}

#[test]
fn criterion_04_regularizer_gradient() {
    let schedule = build_schedule(1000, 0.0001, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let slices = sample_std_normal(&mut rng, (3, 2, 8, 8));

    // zero stub: exact algebraic identity
    let stub = zero_stub();
    let mut grad_rng = ChaCha8Rng::seed_from_u64(7);
    let out = reg_gradient(&slices, &stub, &schedule, 400, &mut grad_rng).unwrap();
    let mut replay = ChaCha8Rng::seed_from_u64(7);
    let ts: Vec<usize> = (0..3).map(|_| replay.gen_range(0..400usize)).collect();
    let eps = sample_std_normal(&mut replay, slices.dim());
    let mut exact = true;
    for (i, &t) in ts.iter().enumerate() {
        let sigma = schedule.sigma[t] as f32;
        for (g, e) in out
            .grads
            .index_axis(ndarray::Axis(0), i)
            .iter()
            .zip(eps.index_axis(ndarray::Axis(0), i).iter())
        {
            if *g != 2.0 * sigma * (0.0 - e) {
                exact = false;
            }
        }
    }

    // constant stub: finite differences of the stop-gradient surrogate
    let noisy = make_noisy(&slices, &ts, &eps, &schedule);
    let pred = ConstStub(sample_std_normal(&mut rng, slices.dim()));
    let mut grad_rng = ChaCha8Rng::seed_from_u64(7);
    let out2 = reg_gradient(&slices, &pred, &schedule, 400, &mut grad_rng).unwrap();
    let residual = {
        let p = pred.predict_eps(&noisy, &ts);
        &p - &eps
    };
    let surrogate = |u: &Tensor4| -> f64 {
        let mut acc = 0.0;
        for (i, &t) in ts.iter().enumerate() {
            let sigma = schedule.sigma[t];
            let dot: f64 = residual
                .index_axis(ndarray::Axis(0), i)
                .iter()
                .zip(u.index_axis(ndarray::Axis(0), i).iter())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            acc += 2.0 * sigma * dot;
        }
        acc
    };
    let mut worst = 0.0f64;
    let h = 1e-2f32;
    for flat in (0..noisy.len()).step_by(5) {
        let mut up = noisy.clone();
        up.as_slice_mut().unwrap()[flat] += h;
        let mut um = noisy.clone();
        um.as_slice_mut().unwrap()[flat] -= h;
        let fd = (surrogate(&up) - surrogate(&um)) / (2.0 * h as f64);
        let an = out2.grads.as_slice().unwrap()[flat] as f64;
        worst = worst.max((fd - an).abs() / an.abs().max(1.0));
    }
    report(
        4,
        "regularizer gradient",
        exact && worst < 1e-6,
        &format!("zero-stub identity exact: {exact}; surrogate FD worst rel err {worst:.2e}"),
    );
}

#[test]
fn criterion_05_representation_oracles() {
    // tiled rasterization vs brute force within the truncation bound
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let n = 1000;
    let mut cloud = GaussianCloud {
        mu: Vec::new(),
        log_scale: Vec::new(),
        quat: Vec::new(),
        amp: Vec::new(),
    };
    for _ in 0..n {
        cloud.mu.push([
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
        ]);
        cloud.log_scale.push([
            rng.gen_range(-2.5..-0.8),
            rng.gen_range(-2.5..-0.8),
            rng.gen_range(-2.5..-0.8),
        ]);
        cloud.quat.push([
            rng.gen_range(-1.0..1.0f32),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]);
        cloud
            .amp
            .push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    }
    cloud.normalize_quats();
    let mesh = make_mesh3((20, 18, 16)).unwrap();
    let tiled = cloud.rasterize_mesh3(&mesh, TRUNC_SIGMAS).unwrap();
    let pts = {
        let mut v = Vec::new();
        for &x in &mesh.xs {
            for &y in &mesh.ys {
                for &z in &mesh.zs {
                    v.push([x, y, z]);
                }
            }
        }
        v
    };
    let brute = rasterize_points_bruteforce64(&cloud, &pts);
    let bound: f64 = cloud
        .amp
        .iter()
        .map(|ab| ((ab[0] * ab[0] + ab[1] * ab[1]) as f64).sqrt())
        .sum::<f64>()
        * (-0.5 * TRUNC_SIGMAS * TRUNC_SIGMAS).exp();
    let mut worst_gap = 0.0f64;
    for (t, b) in tiled.iter().zip(brute.iter()) {
        let err = ((t.re as f64 - b.re).powi(2) + (t.im as f64 - b.im).powi(2)).sqrt();
        worst_gap = worst_gap.max(err);
    }
    let raster_ok = worst_gap <= bound + 1e-6;

    // gradient check on a small cloud, generous truncation
    let small = GaussianCloud {
        mu: cloud.mu[..8].to_vec(),
        log_scale: cloud.log_scale[..8].to_vec(),
        quat: cloud.quat[..8].to_vec(),
        amp: cloud.amp[..8].to_vec(),
    };
    let gmesh = make_mesh3((6, 6, 6)).unwrap();
    let upstream = Array3::from_shape_simple_fn(gmesh.dims(), || {
        C32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let mut grads = GaussianGrads::zeros(small.len());
    small
        .rasterize_backward_mesh3(&gmesh, 8.0, &upstream, &mut grads)
        .unwrap();
    let gpts = {
        let mut v = Vec::new();
        for &x in &gmesh.xs {
            for &y in &gmesh.ys {
                for &z in &gmesh.zs {
                    v.push([x, y, z]);
                }
            }
        }
        v
    };
    let loss = |c: &GaussianCloud| -> f64 {
        rasterize_points_bruteforce64(c, &gpts)
            .iter()
            .zip(upstream.iter())
            .map(|(a, g)| a.re * g.re as f64 + a.im * g.im as f64)
            .sum()
    };
    let mut grad_worst = 0.0f64;
    let eps = 1e-4f32;
    for k in 0..small.len() {
        for j in 0..3 {
            for (get, set, an) in [
                (
                    small.mu[k][j],
                    0usize,
                    grads.mu[k][j],
                ),
                (small.log_scale[k][j], 1, grads.log_scale[k][j]),
            ] {
                let mut cp = small.clone();
                let orig = get;
                let (hi, lo, lp, lm);
                if set == 0 {
                    cp.mu[k][j] = orig + eps;
                    hi = cp.mu[k][j] as f64;
                    lp = loss(&cp);
                    cp.mu[k][j] = orig - eps;
                    lo = cp.mu[k][j] as f64;
                    lm = loss(&cp);
                } else {
                    cp.log_scale[k][j] = orig + eps;
                    hi = cp.log_scale[k][j] as f64;
                    lp = loss(&cp);
                    cp.log_scale[k][j] = orig - eps;
                    lo = cp.log_scale[k][j] as f64;
                    lm = loss(&cp);
                }
                let fd = (lp - lm) / (hi - lo);
                let scale = an.abs().max(fd.abs()).max(1e-3);
                grad_worst = grad_worst.max((fd - an).abs() / scale);
            }
        }
        for j in 0..2 {
            let mut cp = small.clone();
            let orig = cp.amp[k][j];
            cp.amp[k][j] = orig + eps;
            let hi = cp.amp[k][j] as f64;
            let lp = loss(&cp);
            cp.amp[k][j] = orig - eps;
            let lo = cp.amp[k][j] as f64;
            let lm = loss(&cp);
            let fd = (lp - lm) / (hi - lo);
            let an = grads.amp[k][j];
            let scale = an.abs().max(fd.abs()).max(1e-3);
            grad_worst = grad_worst.max((fd - an).abs() / scale);
        }
    }
    let grads_ok = grad_worst < 1e-4;

    // trilinear resampling exact on affine fields
    let dims = (9, 8, 7);
    let xs = axis_coords(dims.0);
    let ys = axis_coords(dims.1);
    let zs = axis_coords(dims.2);
    let f = |x: f32, y: f32, z: f32| C32::new(0.1 + 0.8 * x - 0.5 * y, 0.4 * z - 0.2);
    let mut grid = Array3::<C32>::zeros(dims);
    for i in 0..dims.0 {
        for j in 0..dims.1 {
            for k in 0..dims.2 {
                grid[[i, j, k]] = f(xs[i], ys[j], zs[k]);
            }
        }
    }
    let repr = GridRepr::new(grid, InterpMode::Trilinear);
    let mesh = make_mesh3((13, 11, 9)).unwrap();
    let out = resample_grid_mesh3(&repr, &mesh).unwrap();
    let mut tri_worst = 0.0f32;
    let nxs = axis_coords(13);
    let nys = axis_coords(11);
    let nzs = axis_coords(9);
    for i in 0..13 {
        for j in 0..11 {
            for k in 0..9 {
                let cx = nxs[i].clamp(xs[0], xs[dims.0 - 1]);
                let cy = nys[j].clamp(ys[0], ys[dims.1 - 1]);
                let cz = nzs[k].clamp(zs[0], zs[dims.2 - 1]);
                tri_worst = tri_worst.max((out[[i, j, k]] - f(cx, cy, cz)).norm());
            }
        }
    }
    let tri_ok = tri_worst < 1e-6;

    report(
        5,
        "representation oracles",
        raster_ok && grads_ok && tri_ok,
        &format!(
            "raster gap {worst_gap:.2e} (bound {bound:.2e}); grad worst {grad_worst:.2e}; affine {tri_worst:.2e}"
        ),
    );
}

#[test]
fn criterion_11_baseline_sanity() {
    let priors = small_priors();
    let gt = phantom32(200);
    let (ksp, maps) = simulate(&gt, 4, 1.0, 0); // full mask
    let zf = zero_filled(&ksp, &maps);
    let zf_db = db(psnr(&zf, &gt).unwrap());

    // strong data consistency, conditional final step
    let mut cfg = SamplerConfig::new(20, 3, 123);
    cfg.rho = 1e-9;
    cfg.cg_iters = 3;
    let a = reconstruct_dds3d(&ksp, &maps, &priors.matched, &cfg).unwrap();
    let b = reconstruct_dds3d(&ksp, &maps, &priors.matched, &cfg).unwrap();
    let deterministic = a.data == b.data;
    let dds_db = db(psnr(&a, &gt).unwrap());

    // uncond_every = 1 ignores the measurements entirely
    let mut uncond = SamplerConfig::new(8, 1, 5);
    uncond.eta = 0.5;
    let u1 = reconstruct_dds3d(&ksp, &maps, &priors.matched, &uncond).unwrap();
    let other = phantom32(201);
    let (ksp2, maps2) = simulate(&other, 4, 1.0, 3);
    let mut u2 = reconstruct_dds3d(&ksp2, &maps2, &priors.matched, &uncond).unwrap();
    // outputs are unscaled by each acquisition's own factor; undo to compare
    let ratio = ksp2.scale / ksp.scale;
    u2.data.mapv_inplace(|z| z * ratio);
    let rel = u1.rel_err(&u2);
    let measurement_free = rel < 1e-5;

    // FISTA objective trace and the prox grid search
    let (ksp_u, maps_u) = simulate(&gt, 4, 4.0, 17);
    let (_, fista) = reconstruct_l1wavelet(&ksp_u, &maps_u, 0.002, 40).unwrap();
    let monotone = fista
        .objective
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9));

    let mut prox_ok = true;
    let mut prng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let c = C32::new(prng.gen_range(-1.0..1.0), prng.gen_range(-1.0..1.0));
        let tau: f32 = prng.gen_range(0.05..0.6);
        let z_star = soft_threshold_complex(c, tau);
        let obj = |z: C32| 0.5 * (z - c).norm_sqr() + tau * z.norm();
        let steps = 301;
        let mut best = f32::INFINITY;
        for i in 0..steps {
            for j in 0..steps {
                let z = C32::new(
                    -1.0 + 2.0 * i as f32 / (steps - 1) as f32,
                    -1.0 + 2.0 * j as f32 / (steps - 1) as f32,
                );
                best = best.min(obj(z));
            }
        }
        if obj(z_star) > best + 2.0 / (steps - 1) as f32 {
            prox_ok = false;
        }
    }

    report(
        11,
        "baseline sanity",
        deterministic && dds_db >= zf_db && measurement_free && monotone && prox_ok,
        &format!(
            "dds {dds_db:.2} dB vs zf {zf_db:.2} dB, deterministic {deterministic}, \
             uncond swap rel {rel:.2e}, fista monotone {monotone}, prox {prox_ok}"
        ),
    );
}

#[test]
fn criterion_06_kernel_interp_round_trips() {
    // target-size rules
    let sizes_ok = target_size(7, [2.0, 2.0], [1.0, 1.0]).unwrap() == 15
        && target_size(9, [1.0, 1.0], [2.0, 2.0]).unwrap() == 5;

    // Fourier up-then-crop identity
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let taps = Array3::from_shape_simple_fn((3, 7, 7), || rng.gen_range(-1.0..1.0f32));
    let kernel = DepthwiseKernel::new(taps, [1.0, 1.0]).unwrap();
    let up = resize_kernel_raw(&kernel, 13, InterpMethod::FourierZeroPad).unwrap();
    let back = resize_kernel_raw(&up, 7, InterpMethod::FourierZeroPad).unwrap();
    let mut rt_worst = 0.0f32;
    for (a, b) in back.taps.iter().zip(kernel.taps.iter()) {
        rt_worst = rt_worst.max((a - b).abs());
    }
    let rt_ok = rt_worst < 1e-6;

    // DC gain preserved by all three methods for non-zero-DC kernels
    let mut dc_ok = true;
    let mut dc_worst = 0.0f32;
    for method in [
        InterpMethod::Bilinear,
        InterpMethod::FourierZeroPad,
        InterpMethod::ImageZeroPad,
    ] {
        for k_new in [5usize, 9, 11] {
            let out = kernel_interp::resize_kernel(&kernel, k_new, method, true).unwrap();
            for (c, gain) in kernel.dc_gains().iter().enumerate() {
                let new_gain: f32 = out
                    .kernel
                    .taps
                    .index_axis(ndarray::Axis(0), c)
                    .sum();
                let err = (new_gain - gain).abs() / gain.abs().max(1e-6);
                dc_worst = dc_worst.max(err);
                if err > 1e-4 {
                    dc_ok = false;
                }
            }
        }
    }
    report(
        6,
        "kernel interpolation round trips",
        sizes_ok && rt_ok && dc_ok,
        &format!(
            "target sizes {sizes_ok}; up-crop worst {rt_worst:.2e}; DC drift worst {dc_worst:.2e}"
        ),
    );
}
