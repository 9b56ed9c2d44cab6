use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bench_cli::config::{ExperimentConfig, MaskKindSpec, MethodSpec, ReconSpec};
use bench_cli::experiment::{make_mask, run_experiment, run_method};
use bench_cli::metrics::{psnr, ssim_sagittal_avg, Psnr};
use bench_cli::plot::{plot_curves, PlotAxis};
use bench_cli::train_cmd::{run_training, TrainFileConfig};
use bench_cli::BenchError;

use diffusion_prior::Checkpoint;
use sampling_forward::{add_noise, forward, read_cksp, scale_measurements, write_cksp};
use variational_recon::{KernelInterpChoice, Representation};
use volume_core::{
    generate_phantom, read_cvol, read_maps, synth_coil_maps, write_cvol, write_maps,
};

#[derive(Parser)]
#[command(
    name = "mrbench",
    about = "Multicoil 3D MRI reconstruction benchmark with 2D diffusion priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected W,H,D".into());
    }
    let p: Vec<usize> = parts
        .iter()
        .map(|v| v.trim().parse().map_err(|e| format!("{e}")))
        .collect::<Result<_, String>>()?;
    Ok((p[0], p[1], p[2]))
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected H,D".into());
    }
    Ok((
        parts[0].trim().parse().map_err(|e| format!("{e}"))?,
        parts[1].trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_vox(s: &str) -> Result<[f32; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected w,h,d in mm".into());
    }
    let mut out = [0.0f32; 3];
    for (o, p) in out.iter_mut().zip(parts.iter()) {
        *o = p.trim().parse().map_err(|e| format!("{e}"))?;
    }
    Ok(out)
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic phantom volume (.cvol)
    Phantom {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_triple, default_value = "64,64,64")]
        dims: (usize, usize, usize),
        #[arg(long, default_value_t = 12)]
        ellipsoids: usize,
        #[arg(long, value_parser = parse_vox, default_value = "1,1,1")]
        voxel_size: [f32; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic coil sensitivity maps (.maps)
    Coilmaps {
        #[arg(long, value_parser = parse_triple)]
        dims: (usize, usize, usize),
        #[arg(long, default_value_t = 4)]
        coils: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_vox, default_value = "1,1,1")]
        voxel_size: [f32; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate an undersampling mask and report its statistics
    Mask {
        #[arg(long, value_parser = parse_pair)]
        shape: (usize, usize),
        #[arg(long, default_value_t = 8.0)]
        accel: f64,
        #[arg(long, default_value = "poisson")]
        kind: String,
        #[arg(long, value_parser = parse_pair, default_value = "16,16")]
        acs: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional text dump (one 0/1 row per line)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate multicoil measurements from a volume (.cksp)
    Simulate {
        #[arg(long)]
        vol: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        accel: f64,
        #[arg(long, default_value = "poisson")]
        kind: String,
        #[arg(long, value_parser = parse_pair, default_value = "16,16")]
        acs: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f32,
        /// Rescale measurements to unit reconstruction variance
        #[arg(long, default_value_t = true)]
        scale: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a slice-denoiser prior from a TOML config
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a volume from measurements
    Recon(ReconArgs),
    /// Compare a reconstruction against a reference volume
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Run a full benchmark grid from a TOML config
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot PSNR curves from a metrics CSV
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "accel")]
        x: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    ksp: PathBuf,
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "variational")]
    method: String,
    #[arg(long, default_value_t = 0.05)]
    lambda: f32,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0.05)]
    step_size: f32,
    #[arg(long)]
    t_prime: Option<usize>,
    #[arg(long, default_value_t = 50)]
    slices_per_plane: usize,
    #[arg(long, default_value_t = 4)]
    slab_size: usize,
    #[arg(long, default_value = "voxel")]
    representation: String,
    #[arg(long, default_value = "none")]
    kernel_interp: String,
    #[arg(long, default_value_t = 200000)]
    gaussian_count: usize,
    #[arg(long, default_value_t = 0.002)]
    mu: f32,
    #[arg(long, default_value_t = 100)]
    n_steps: usize,
    #[arg(long, default_value_t = 3)]
    uncond_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the run log (defaults next to the output volume)
    #[arg(long)]
    run_log: Option<PathBuf>,
}

fn mask_kind(kind: &str) -> Result<MaskKindSpec, BenchError> {
    match kind {
        "poisson" => Ok(MaskKindSpec::Poisson),
        "gaussian" => Ok(MaskKindSpec::Gaussian),
        "full" => Ok(MaskKindSpec::Full),
        other => Err(BenchError::Config(format!("unknown mask kind '{other}'"))),
    }
}

fn run(cli: Cli) -> Result<u8, BenchError> {
    match cli.command {
        Command::Phantom {
            seed,
            dims,
            ellipsoids,
            voxel_size,
            out,
        } => {
            let mut v = generate_phantom(seed, dims, ellipsoids)?;
            v.voxel_size = voxel_size;
            write_cvol(&v, &out)?;
            println!("wrote {} ({:?} voxels)", out.display(), v.dims());
            Ok(0)
        }
        Command::Coilmaps {
            dims,
            coils,
            seed,
            voxel_size,
            out,
        } => {
            let maps = synth_coil_maps(dims, coils, seed)?;
            write_maps(&maps, voxel_size, &out)?;
            println!("wrote {} ({} coils)", out.display(), coils);
            Ok(0)
        }
        Command::Mask {
            shape,
            accel,
            kind,
            acs,
            seed,
            out,
        } => {
            let mask = make_mask(mask_kind(&kind)?, shape, accel, [acs.0, acs.1], seed)?;
            println!(
                "{} mask {}x{}: {} samples, achieved R = {:.3}",
                kind,
                shape.0,
                shape.1,
                mask.num_sampled(),
                mask.achieved_r
            );
            if let Some(path) = out {
                let mut text = String::new();
                for row in mask.pattern.rows() {
                    for &b in row {
                        text.push(if b { '1' } else { '0' });
                    }
                    text.push('\n');
                }
                std::fs::write(&path, text)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Simulate {
            vol,
            maps,
            accel,
            kind,
            acs,
            seed,
            noise_sigma,
            scale,
            out,
        } => {
            let v = read_cvol(&vol)?;
            let (m, _) = read_maps(&maps)?;
            let dims = v.dims();
            let mask = make_mask(
                mask_kind(&kind)?,
                (dims.1, dims.2),
                accel,
                [acs.0, acs.1],
                seed,
            )?;
            let mut ksp = forward(&v, &m, &mask)?;
            if noise_sigma > 0.0 {
                add_noise(&mut ksp, noise_sigma, seed ^ 0x5eed);
            }
            let ksp = if scale {
                let (scaled, s) = scale_measurements(&ksp, &m)?;
                println!("measurement scale {s:.5}");
                scaled
            } else {
                ksp
            };
            write_cksp(&ksp, &out)?;
            println!(
                "wrote {} (achieved R = {:.3})",
                out.display(),
                ksp.mask.achieved_r
            );
            Ok(0)
        }
        Command::Train { config, out } => {
            let cfg = TrainFileConfig::from_toml_file(&config)?;
            let report = run_training(&cfg, &out)?;
            let first = report.losses.first().copied().unwrap_or(0.0);
            let last = report.losses.last().copied().unwrap_or(0.0);
            println!(
                "trained {} steps, loss {first:.4} -> {last:.4}, checkpoint at {}",
                report.checkpoint.step,
                out.display()
            );
            Ok(0)
        }
        Command::Recon(args) => run_recon(args),
        Command::Eval { recon, reference } => {
            let a = read_cvol(&recon)?;
            let b = read_cvol(&reference)?;
            match psnr(&a, &b)? {
                Psnr::Db(v) => println!("psnr_db {v:.4}"),
                Psnr::Identical => println!("psnr_db identical"),
            }
            println!("ssim {:.6}", ssim_sagittal_avg(&a, &b)?);
            Ok(0)
        }
        Command::Bench { config, seed, out } => {
            let mut cfg = ExperimentConfig::from_toml_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let (csv, failures) = run_experiment(&cfg)?;
            println!("metrics at {}", csv.display());
            if failures > 0 {
                eprintln!("{failures} cells failed; see the error column");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Plot { csv, x, out } => {
            plot_curves(&csv, PlotAxis::parse(&x)?, &out)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
    }
}

fn run_recon(args: ReconArgs) -> Result<u8, BenchError> {
    // argument validation precedes any file IO so bad flags exit with the
    // config error code
    let method = match args.method.as_str() {
        "variational" => MethodSpec::Variational,
        "dds" => MethodSpec::Dds,
        "l1wavelet" => MethodSpec::L1Wavelet,
        "zero_filled" => MethodSpec::ZeroFilled,
        other => return Err(BenchError::Config(format!("unknown method '{other}'"))),
    };
    let representation = match args.representation.as_str() {
        "voxel" => Representation::Voxel,
        "grid_resample" => Representation::GridResample,
        "inn" => Representation::Inn,
        "gaussian" => Representation::Gaussian,
        other => {
            return Err(BenchError::Config(format!(
                "unknown representation '{other}'"
            )))
        }
    };
    let kernel_interp = match args.kernel_interp.as_str() {
        "none" => KernelInterpChoice::None,
        "bilinear" => KernelInterpChoice::Bilinear,
        "fourier_pad" => KernelInterpChoice::FourierPad,
        "image_pad" => KernelInterpChoice::ImagePad,
        other => {
            return Err(BenchError::Config(format!(
                "unknown kernel interpolation '{other}'"
            )))
        }
    };
    let ksp = read_cksp(&args.ksp)?;
    let (maps, _) = read_maps(&args.maps)?;
    let ckpt = match &args.ckpt {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let spec = ReconSpec {
        method,
        lambda: Some(args.lambda),
        iters: Some(args.iters),
        step_size: Some(args.step_size),
        t_prime: args.t_prime,
        slices_per_plane: Some(args.slices_per_plane),
        slab_size: Some(args.slab_size),
        representation: Some(representation),
        kernel_interp: Some(kernel_interp),
        gaussian_count: Some(args.gaussian_count),
        inn_width: None,
        inn_depth: None,
        inn_features: None,
        inn_scale: None,
        n_steps: Some(args.n_steps),
        eta: None,
        rho: None,
        cg_iters: None,
        uncond_every: Some(args.uncond_every),
        mu: Some(args.mu),
    };

    // the variational path emits a run log alongside the volume
    if method == MethodSpec::Variational {
        let ckpt = ckpt
            .as_ref()
            .ok_or_else(|| BenchError::Config("variational needs --ckpt".into()))?;
        let t_prime = args.t_prime.unwrap_or((2 * ckpt.schedule.t_max).div_ceil(5));
        let mut cfg = variational_recon::ReconConfig::new(
            args.lambda,
            args.iters,
            args.step_size,
            t_prime,
            args.seed,
        )
        .with_representation(representation)
        .with_slices(args.slices_per_plane, args.slab_size);
        cfg.kernel_interp = kernel_interp;
        cfg.gaussian_count = args.gaussian_count;
        let dims = ksp.dims();
        let mut backend: Box<dyn variational_recon::ReprBackend> = match representation {
            Representation::Voxel => Box::new(variational_recon::VoxelBackend::zeros(dims)),
            Representation::GridResample => Box::new(variational_recon::GridBackend::zeros(
                dims,
                representations::InterpMode::Trilinear,
            )),
            Representation::Inn => Box::new(variational_recon::InnBackend::new(
                representations::InnConfig::default(),
            )),
            Representation::Gaussian => {
                let zf = sampling_forward::adjoint(&ksp, &maps)?;
                Box::new(variational_recon::GaussianBackend::from_volume(
                    &zf,
                    args.gaussian_count,
                    args.seed,
                )?)
            }
        };
        let (vol, log) =
            variational_recon::reconstruct_variational(&ksp, &maps, Some(ckpt), &cfg, &mut *backend)?;
        write_cvol(&vol, &args.out)?;
        let log_path = args
            .run_log
            .clone()
            .unwrap_or_else(|| args.out.with_extension("run.json"));
        std::fs::write(&log_path, serde_json::to_string_pretty(&log).unwrap())?;
        println!("wrote {} and {}", args.out.display(), log_path.display());
    } else {
        let vol = run_method(&spec, &ksp, &maps, ckpt.as_ref(), args.seed)?;
        write_cvol(&vol, &args.out)?;
        println!("wrote {}", args.out.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e @ BenchError::Config(_)) | Err(e @ BenchError::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
