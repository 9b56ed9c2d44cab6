use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffusion_prior::Checkpoint;
use sampling_forward::{
    add_noise, adjoint, forward, gen_gaussian_mask, gen_poisson_mask, scale_measurements,
    MulticoilKSpace, SamplingMask,
};
use variational_recon::{
    reconstruct_variational, GaussianBackend, GridBackend, InnBackend, ReconConfig, ReprBackend,
    Representation, VoxelBackend,
};
use volume_core::{
    generate_phantom, read_cvol, synth_coil_maps, trilinear_downsample, CoilSensitivities,
    ComplexVolume,
};

use crate::config::{
    acs_for, DatasetSpec, ExperimentConfig, MaskKindSpec, MethodSpec, PriorSpec, ReconSpec,
};
use crate::metrics::{psnr, ssim_sagittal_avg, Psnr};
use crate::{BenchError, Result};

/// Exact CSV header of the metrics table.
pub const CSV_HEADER: &str =
    "volume_id,method,v_train_mm,v_recon_mm,accel,psnr_db,ssim,wall_s,seed,error";

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub volume_id: String,
    pub method: String,
    pub v_train_mm: f64,
    pub v_recon_mm: f64,
    pub accel: f64,
    pub psnr_db: Option<Psnr>,
    pub ssim: Option<f64>,
    pub wall_s: f64,
    pub seed: u64,
    pub error: String,
}

impl MetricsRow {
    fn to_csv_line(&self) -> String {
        let psnr = match self.psnr_db {
            Some(Psnr::Db(v)) => format!("{v:.4}"),
            Some(Psnr::Identical) => "identical".to_string(),
            None => String::new(),
        };
        let ssim = self.ssim.map(|s| format!("{s:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.4},{:.4},{},{},{},{:.3},{},{}",
            self.volume_id,
            self.method,
            self.v_train_mm,
            self.v_recon_mm,
            self.accel,
            psnr,
            ssim,
            self.wall_s,
            self.seed,
            self.error.replace(',', ";")
        )
    }

    /// Resume key: everything that identifies a cell, wall time excluded.
    pub fn key(volume_id: &str, method: &str, v_train: f64, v_recon: f64, accel: f64) -> String {
        format!("{volume_id}|{method}|{v_train:.4}|{v_recon:.4}|{accel}")
    }
}

/// FNV-style mix of the global seed and a cell key so parallel schedules
/// and resumes never change per-cell randomness.
pub fn cell_seed(global: u64, key: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ global.wrapping_mul(0x100000001b3);
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

struct Cell {
    volume_id: String,
    volume_seed_or_path: VolumeSource,
    accel: f64,
    prior: Option<PriorSpec>,
    v_recon_factor: f64,
}

enum VolumeSource {
    Phantom(u64),
    File(PathBuf),
}

fn method_label(recon: &ReconSpec, prior: Option<&PriorSpec>) -> String {
    match prior {
        Some(p) => format!("{}[{}]", recon.method.name(), p.tag),
        None => recon.method.name().to_string(),
    }
}

fn v_train_of(ckpt: &Checkpoint) -> f64 {
    // smallest training pixel size (native resolution for diverse priors)
    ckpt.config
        .train_voxel_sizes
        .iter()
        .map(|p| ((p[0] as f64) * (p[1] as f64)).sqrt())
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

fn geometric_inplane(vox: [f32; 3]) -> f64 {
    ((vox[1] as f64) * (vox[2] as f64)).sqrt()
}

fn load_volume(run: &ExperimentConfig, src: &VolumeSource) -> Result<ComplexVolume> {
    match (src, &run.dataset) {
        (
            VolumeSource::Phantom(seed),
            DatasetSpec::Phantom {
                dims,
                n_ellipsoids,
                voxel_size_mm,
                ..
            },
        ) => {
            let mut v = generate_phantom(*seed, (dims[0], dims[1], dims[2]), *n_ellipsoids)?;
            v.voxel_size = *voxel_size_mm;
            Ok(v)
        }
        (VolumeSource::File(path), _) => Ok(read_cvol(path)?),
        _ => Err(BenchError::Config("dataset kind mismatch".into())),
    }
}

pub fn make_mask(
    kind: MaskKindSpec,
    shape: (usize, usize),
    accel: f64,
    acs: [usize; 2],
    seed: u64,
) -> Result<SamplingMask> {
    let acs = acs_for(shape, acs);
    Ok(match kind {
        MaskKindSpec::Full => SamplingMask::full(shape, 0),
        MaskKindSpec::Poisson => gen_poisson_mask(shape, accel, (acs.0, acs.1), seed)?,
        MaskKindSpec::Gaussian => gen_gaussian_mask(shape, accel, (acs.0, acs.1), seed)?,
    })
}

fn build_recon_config(spec: &ReconSpec, t_max: usize, seed: u64) -> Result<ReconConfig> {
    let lambda = spec
        .lambda
        .ok_or_else(|| BenchError::Config("variational runs need lambda".into()))?;
    let iters = spec
        .iters
        .ok_or_else(|| BenchError::Config("variational runs need iters".into()))?;
    let step = spec
        .step_size
        .ok_or_else(|| BenchError::Config("variational runs need step_size".into()))?;
    let t_prime = spec.t_prime.unwrap_or((2 * t_max).div_ceil(5));
    let mut cfg = ReconConfig::new(lambda, iters, step, t_prime, seed);
    if let Some(s) = spec.slices_per_plane {
        cfg.slices_per_plane = s;
    }
    if let Some(s) = spec.slab_size {
        cfg.slab_size = s;
    }
    if let Some(r) = spec.representation {
        cfg.representation = r;
    }
    if let Some(k) = spec.kernel_interp {
        cfg.kernel_interp = k;
    }
    if let Some(g) = spec.gaussian_count {
        cfg.gaussian_count = g;
    }
    Ok(cfg)
}

/// Reconstruct one simulated acquisition with the configured method.
pub fn run_method(
    spec: &ReconSpec,
    ksp: &MulticoilKSpace,
    maps: &CoilSensitivities,
    ckpt: Option<&Checkpoint>,
    seed: u64,
) -> Result<ComplexVolume> {
    match spec.method {
        MethodSpec::ZeroFilled => {
            let zf = adjoint(ksp, maps)?;
            Ok(zf.scale(1.0 / ksp.scale))
        }
        MethodSpec::L1Wavelet => {
            let mu = spec
                .mu
                .ok_or_else(|| BenchError::Config("l1wavelet needs mu".into()))?;
            let iters = spec.iters.unwrap_or(100);
            let (out, _) = baselines::reconstruct_l1wavelet(ksp, maps, mu, iters)?;
            Ok(out)
        }
        MethodSpec::Dds => {
            let ckpt =
                ckpt.ok_or_else(|| BenchError::Config("dds needs a prior checkpoint".into()))?;
            let mut cfg = baselines::SamplerConfig::new(
                spec.n_steps.unwrap_or(100),
                spec.uncond_every.unwrap_or(3),
                seed,
            );
            if let Some(e) = spec.eta {
                cfg.eta = e;
            }
            if let Some(r) = spec.rho {
                cfg.rho = r;
            }
            if let Some(c) = spec.cg_iters {
                cfg.cg_iters = c;
            }
            Ok(baselines::reconstruct_dds3d(ksp, maps, ckpt, &cfg)?)
        }
        MethodSpec::Variational => {
            let ckpt = ckpt.ok_or_else(|| {
                BenchError::Config("variational needs a prior checkpoint".into())
            })?;
            let cfg = build_recon_config(spec, ckpt.schedule.t_max, seed)?;
            let dims = ksp.dims();
            let mut backend: Box<dyn ReprBackend> = match cfg.representation {
                Representation::Voxel => Box::new(VoxelBackend::zeros(dims)),
                Representation::GridResample => Box::new(GridBackend::zeros(
                    dims,
                    representations::InterpMode::Trilinear,
                )),
                Representation::Inn => Box::new(InnBackend::new(representations::InnConfig {
                    width: spec.inn_width.unwrap_or(128),
                    depth: spec.inn_depth.unwrap_or(3),
                    n_features: spec.inn_features.unwrap_or(64),
                    scale: spec.inn_scale.unwrap_or(10.0),
                    seed,
                })),
                Representation::Gaussian => {
                    let zf = adjoint(ksp, maps)?;
                    Box::new(GaussianBackend::from_volume(&zf, cfg.gaussian_count, seed)?)
                }
            };
            let (out, _) = reconstruct_variational(ksp, maps, Some(ckpt), &cfg, &mut *backend)?;
            Ok(out)
        }
    }
}

fn existing_keys(csv: &Path) -> Result<HashSet<String>> {
    let mut keys = HashSet::new();
    if !csv.exists() {
        return Ok(keys);
    }
    let text = std::fs::read_to_string(csv)?;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() >= 5 {
            keys.insert(MetricsRow::key(
                fields[0],
                fields[1],
                fields[2].parse().unwrap_or(0.0),
                fields[3].parse().unwrap_or(0.0),
                fields[4].parse().unwrap_or(0.0),
            ));
        }
    }
    Ok(keys)
}

/// Run every cell of the experiment grid, appending one CSV row per cell.
/// Completed cells (already present in the CSV) are skipped, so re-running
/// a finished experiment leaves the file untouched. Returns the CSV path
/// and the number of failed cells.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(PathBuf, usize)> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("metrics.csv");

    // assemble the cell grid
    let volumes: Vec<(String, VolumeSource)> = match &cfg.dataset {
        DatasetSpec::Phantom { seeds, .. } => seeds
            .iter()
            .map(|&s| (format!("phantom{s}"), VolumeSource::Phantom(s)))
            .collect(),
        DatasetSpec::Files { paths } => paths
            .iter()
            .map(|p| {
                (
                    p.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string()),
                    VolumeSource::File(p.clone()),
                )
            })
            .collect(),
    };
    let priors: Vec<Option<PriorSpec>> = if cfg.priors.is_empty() {
        vec![None]
    } else {
        cfg.priors.iter().cloned().map(Some).collect()
    };
    let factors = if cfg.shift.v_recon_factors.is_empty() {
        vec![1.0]
    } else {
        cfg.shift.v_recon_factors.clone()
    };

    let mut cells = Vec::new();
    for (vid, src) in &volumes {
        for &accel in &cfg.masks.accels {
            for prior in &priors {
                for &factor in &factors {
                    cells.push(Cell {
                        volume_id: vid.clone(),
                        volume_seed_or_path: match src {
                            VolumeSource::Phantom(s) => VolumeSource::Phantom(*s),
                            VolumeSource::File(p) => VolumeSource::File(p.clone()),
                        },
                        accel,
                        prior: prior.clone(),
                        v_recon_factor: factor,
                    });
                }
            }
        }
    }

    // load checkpoints once per tag
    let mut checkpoints: HashMap<String, Checkpoint> = HashMap::new();
    for p in cfg.priors.iter() {
        if !checkpoints.contains_key(&p.tag) {
            checkpoints.insert(p.tag.clone(), Checkpoint::load(&p.path)?);
        }
    }

    let done = existing_keys(&csv_path)?;
    let fresh = !csv_path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)?;
    if fresh {
        use std::io::Write;
        writeln!(file, "{CSV_HEADER}")?;
    }

    // collision check over the planned grid
    {
        let mut seen = HashSet::new();
        for cell in &cells {
            let ckpt = cell.prior.as_ref().map(|p| &checkpoints[&p.tag]);
            let id = cell_id(cfg, cell, ckpt);
            if !seen.insert(id.key.clone()) {
                return Err(BenchError::Config(format!(
                    "duplicate experiment cell {}",
                    id.key
                )));
            }
        }
    }

    let mut failures = 0usize;
    for cell in &cells {
        let ckpt = cell.prior.as_ref().map(|p| &checkpoints[&p.tag]);
        let id = cell_id(cfg, cell, ckpt);
        if done.contains(&id.key) {
            continue;
        }
        let row = run_cell(cfg, cell, ckpt, &id);
        if !row.error.is_empty() {
            failures += 1;
        }
        use std::io::Write;
        writeln!(file, "{}", row.to_csv_line())?;
    }
    Ok((csv_path, failures))
}

struct CellId {
    key: String,
    method: String,
    v_train: f64,
    /// Nominal reconstruction pixel size (native / factor); the rounded
    /// actual size stays recoverable from the volume files.
    v_recon: f64,
}

fn cell_id(cfg: &ExperimentConfig, cell: &Cell, ckpt: Option<&Checkpoint>) -> CellId {
    let method = method_label(&cfg.recon, cell.prior.as_ref());
    let v_train = ckpt.map(v_train_of).unwrap_or(0.0);
    let native = match &cfg.dataset {
        DatasetSpec::Phantom { voxel_size_mm, .. } => geometric_inplane(*voxel_size_mm),
        DatasetSpec::Files { .. } => 1.0,
    };
    let v_recon = native / cell.v_recon_factor;
    CellId {
        key: MetricsRow::key(&cell.volume_id, &method, v_train, v_recon, cell.accel),
        method,
        v_train,
        v_recon,
    }
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, ckpt: Option<&Checkpoint>, id: &CellId) -> MetricsRow {
    let started = Instant::now();
    let seed = cell_seed(cfg.seed, &id.key);

    let result: Result<(Psnr, f64)> = (|| {
        let gt = load_volume(cfg, &cell.volume_seed_or_path)?;
        let gt_v = trilinear_downsample(&gt, cell.v_recon_factor)?;
        let dims = gt_v.dims();
        let maps = synth_coil_maps(dims, cfg.coils.count, cfg.coils.seed)?;
        let mask = make_mask(
            cfg.masks.kind,
            (dims.1, dims.2),
            cell.accel,
            cfg.masks.acs,
            seed,
        )?;
        let mut ksp = forward(&gt_v, &maps, &mask)?;
        if cfg.masks.noise_sigma > 0.0 {
            add_noise(&mut ksp, cfg.masks.noise_sigma, seed ^ 0x5eed);
        }
        let (ksp, _) = scale_measurements(&ksp, &maps)?;
        let recon = run_method(&cfg.recon, &ksp, &maps, ckpt, seed)?;
        let p = psnr(&recon, &gt_v)?;
        let s = ssim_sagittal_avg(&recon, &gt_v)?;
        Ok((p, s))
    })();

    let (psnr_db, ssim, error) = match result {
        Ok((p, s)) => (Some(p), Some(s), String::new()),
        Err(e) => (None, None, e.to_string()),
    };
    MetricsRow {
        volume_id: cell.volume_id.clone(),
        method: id.method.clone(),
        v_train_mm: id.v_train,
        v_recon_mm: id.v_recon,
        accel: cell.accel,
        psnr_db,
        ssim,
        wall_s: started.elapsed().as_secs_f64(),
        seed,
        error,
    }
}
