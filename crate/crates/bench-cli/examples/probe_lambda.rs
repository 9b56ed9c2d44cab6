// Lambda / iteration sweep for the variational method on one phantom.

use bench_cli::metrics::{psnr, Psnr};
use diffusion_prior::{
    build_schedule, extract_slices, train, Checkpoint, DenoiserConfig, SliceSource, TrainConfig,
};
use sampling_forward::{adjoint, forward, gen_poisson_mask, scale_measurements};
use variational_recon::{reconstruct_variational, ReconConfig, ReprBackend, VoxelBackend};
use volume_core::{generate_phantom, synth_coil_maps, ComplexVolume, Plane};

fn main() {
    let train_vols: Vec<ComplexVolume> = (0..10)
        .map(|s| generate_phantom(s, (32, 32, 32), 10).unwrap())
        .collect();
    let schedule = build_schedule(1000, 0.0001, 0.02).unwrap();
    let config = DenoiserConfig::small();
    let source = SliceSource::Static(extract_slices(&train_vols, &Plane::ALL).unwrap());
    let tcfg = TrainConfig { steps: 1500, seed: 0, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let ckpt: Checkpoint = train(&config, &source, &schedule, &tcfg).unwrap().checkpoint;
    eprintln!("trained in {:.0}s", t0.elapsed().as_secs_f64());

    let gt = generate_phantom(100, (32, 32, 32), 10).unwrap();
    let maps = synth_coil_maps(gt.dims(), 4, 77).unwrap();
    let mask = gen_poisson_mask((32, 32), 8.0, (8, 8), 1000).unwrap();
    let ksp = forward(&gt, &maps, &mask).unwrap();
    let (ksp, _) = scale_measurements(&ksp, &maps).unwrap();
    let zf = adjoint(&ksp, &maps).unwrap().scale(1.0 / ksp.scale);
    let zf_db = match psnr(&zf, &gt).unwrap() { Psnr::Db(v) => v, _ => f64::INFINITY };
    println!("zero-filled: {zf_db:.2} dB");

    for lambda in [0.05f32, 0.5, 2.0, 5.0, 15.0, 40.0] {
        for iters in [120usize, 250] {
            let cfg = ReconConfig::new(lambda, iters, 0.05, 400, 9).with_slices(16, 4);
            let mut backend = VoxelBackend::zeros(gt.dims());
            let t0 = std::time::Instant::now();
            let (vol, log) =
                reconstruct_variational(&ksp, &maps, Some(&ckpt), &cfg, &mut backend).unwrap();
            let db = match psnr(&vol, &gt).unwrap() { Psnr::Db(v) => v, _ => f64::INFINITY };
            println!(
                "lambda {lambda:>5}: iters {iters:>3} -> {db:.2} dB ({:.0}s, dc_end {:.3e}, reg_end {:.3})",
                t0.elapsed().as_secs_f64(),
                log.dc_loss.last().unwrap(),
                log.reg_loss.last().unwrap()
            );
        }
    }
}
