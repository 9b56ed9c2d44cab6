// Desk-scale calibration of the resolution-shift experiments: trains three
// small priors (matched, coarse, diverse) on 32^3 phantoms and prints the
// PSNR table the acceptance thresholds are pinned against.

use diffusion_prior::{
    build_schedule, extract_slices, train, Checkpoint, DenoiserConfig, SliceSource, TrainConfig,
};
use bench_cli::metrics::{psnr, Psnr};
use sampling_forward::{adjoint, forward, gen_poisson_mask, scale_measurements};
use variational_recon::{
    reconstruct_variational, GridBackend, ReconConfig, Representation, ReprBackend, VoxelBackend,
};
use volume_core::{generate_phantom, synth_coil_maps, trilinear_downsample, ComplexVolume, Plane};

fn train_prior(vols: &[ComplexVolume], diverse: bool, steps: u64, seed: u64) -> Checkpoint {
    let schedule = build_schedule(1000, 0.0001, 0.02).unwrap();
    let config = DenoiserConfig::small();
    let source = if diverse {
        SliceSource::diverse(vols.to_vec()).unwrap()
    } else {
        SliceSource::Static(extract_slices(vols, &Plane::ALL).unwrap())
    };
    let tcfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let report = train(&config, &source, &schedule, &tcfg).unwrap();
    let n = report.losses.len();
    println!(
        "  trained {} steps in {:.1}s, loss {:.4} -> {:.4}",
        steps,
        t0.elapsed().as_secs_f64(),
        report.losses[..50.min(n)].iter().sum::<f64>() / 50.0f64.min(n as f64),
        report.losses[n.saturating_sub(50)..].iter().sum::<f64>() / 50.0f64.min(n as f64)
    );
    report.checkpoint
}

fn recon_psnr(
    gt: &ComplexVolume,
    ckpt: &Checkpoint,
    accel: f64,
    seed: u64,
    cfg_fn: impl Fn(ReconConfig) -> ReconConfig,
) -> f64 {
    let dims = gt.dims();
    let maps = synth_coil_maps(dims, 4, 77).unwrap();
    let acs = ((dims.1 * 16) / 64).max(2);
    let mask = gen_poisson_mask((dims.1, dims.2), accel, (acs, acs), seed).unwrap();
    let ksp = forward(gt, &maps, &mask).unwrap();
    let (ksp, _) = scale_measurements(&ksp, &maps).unwrap();
    let base = ReconConfig::new(0.05, 120, 0.05, 400, seed).with_slices(16, 4);
    let cfg = cfg_fn(base);
    let mut backend: Box<dyn ReprBackend> = match cfg.representation {
        Representation::GridResample => Box::new(GridBackend::zeros(
            dims,
            representations::InterpMode::Trilinear,
        )),
        _ => Box::new(VoxelBackend::zeros(dims)),
    };
    let (recon, log) =
        reconstruct_variational(&ksp, &maps, Some(ckpt), &cfg, &mut *backend).unwrap();
    for w in &log.warnings {
        eprintln!("    [warn] {w}");
    }
    match psnr(&recon, gt).unwrap() {
        Psnr::Db(v) => v,
        Psnr::Identical => f64::INFINITY,
    }
}

fn zf_psnr(gt: &ComplexVolume, accel: f64, seed: u64) -> f64 {
    let dims = gt.dims();
    let maps = synth_coil_maps(dims, 4, 77).unwrap();
    let acs = ((dims.1 * 16) / 64).max(2);
    let mask = gen_poisson_mask((dims.1, dims.2), accel, (acs, acs), seed).unwrap();
    let ksp = forward(gt, &maps, &mask).unwrap();
    let (ksp, _) = scale_measurements(&ksp, &maps).unwrap();
    let zf = adjoint(&ksp, &maps).unwrap().scale(1.0 / ksp.scale);
    match psnr(&zf, gt).unwrap() {
        Psnr::Db(v) => v,
        Psnr::Identical => f64::INFINITY,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);

    println!("== data");
    let train_vols: Vec<ComplexVolume> = (0..10)
        .map(|s| generate_phantom(s, (32, 32, 32), 10).unwrap())
        .collect();
    let coarse_vols: Vec<ComplexVolume> = train_vols
        .iter()
        .map(|v| trilinear_downsample(v, 0.5).unwrap())
        .collect();
    let test_vols: Vec<ComplexVolume> = (100..103)
        .map(|s| generate_phantom(s, (32, 32, 32), 10).unwrap())
        .collect();

    println!("== training matched prior (1x)");
    let ckpt_match = train_prior(&train_vols, false, steps, 0);
    println!("== training coarse prior (2x)");
    let ckpt_half = train_prior(&coarse_vols, false, steps, 1);
    println!("== training diverse prior");
    let ckpt_diverse = train_prior(&train_vols, true, steps, 2);

    println!("\n== criterion 8 table: R=8, V_recon = 1x (32^3)");
    let mut m_sum = 0.0;
    let mut h_sum = 0.0;
    let mut d_sum = 0.0;
    let mut z_sum = 0.0;
    for (i, gt) in test_vols.iter().enumerate() {
        let seed = 1000 + i as u64;
        let m = recon_psnr(gt, &ckpt_match, 8.0, seed, |c| c);
        let h = recon_psnr(gt, &ckpt_half, 8.0, seed, |c| c);
        let d = recon_psnr(gt, &ckpt_diverse, 8.0, seed, |c| c);
        let z = zf_psnr(gt, 8.0, seed);
        println!("  vol{i}: match {m:.2}  coarse {h:.2}  diverse {d:.2}  zf {z:.2}");
        m_sum += m;
        h_sum += h;
        d_sum += d;
        z_sum += z;
    }
    let n = test_vols.len() as f64;
    let (m, h, d, z) = (m_sum / n, h_sum / n, d_sum / n, z_sum / n);
    println!("  avg: match {m:.2}  coarse {h:.2}  diverse {d:.2}  zf {z:.2}");
    println!("  gap(match-coarse) = {:.2} dB (need >= 1)", m - h);
    println!(
        "  diverse recovery = {:.0}% (need >= 50%)",
        100.0 * (d - h) / (m - h).max(1e-9)
    );
    println!("  diverse no-shift loss = {:.2} dB (need < 0.5)", m - d);

    println!("\n== criterion 9: V_recon = 2x V_train (16^3 recon, matched prior at 1mm)");
    let mut fix_sum = 0.0;
    let mut grid_sum = 0.0;
    for (i, gt) in test_vols.iter().enumerate() {
        let gt2 = trilinear_downsample(gt, 0.5).unwrap();
        let seed = 2000 + i as u64;
        let fix = recon_psnr(&gt2, &ckpt_match, 4.0, seed, |c| c);
        let grid = recon_psnr(&gt2, &ckpt_match, 4.0, seed, |mut c| {
            c.representation = Representation::GridResample;
            c
        });
        println!("  vol{i}: fixed {fix:.2}  grid_resample {grid:.2}");
        fix_sum += fix;
        grid_sum += grid;
    }
    println!(
        "  avg: fixed {:.2}  grid {:.2} (need grid >= fixed)",
        fix_sum / n,
        grid_sum / n
    );

    println!("\n== criterion 10: T' and slice budget at R=8 (matched prior)");
    let gt = &test_vols[0];
    for (label, tp) in [("T'=0.4T", 400usize), ("T'=T", 1000)] {
        let p = recon_psnr(gt, &ckpt_match, 8.0, 3000, |mut c| {
            c.t_prime = tp;
            c
        });
        println!("  {label}: {p:.2} dB");
    }
    for s in [5usize, 50, 100] {
        let p = recon_psnr(gt, &ckpt_match, 8.0, 3001, |mut c| {
            c.slices_per_plane = s;
            c
        });
        println!("  S={s}: {p:.2} dB");
    }
}
