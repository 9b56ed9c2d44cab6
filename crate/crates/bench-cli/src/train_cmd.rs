//! Prior-training driver shared by the CLI and the benchmark harness.

use std::path::Path;

use serde::{Deserialize, Serialize};

use diffusion_prior::{
    build_schedule, extract_slices, train, Arch, DenoiserConfig, SliceSource, TrainConfig,
    TrainReport,
};
use volume_core::{generate_phantom, read_cvol, trilinear_downsample, ComplexVolume, Plane};

use crate::{BenchError, Result};

fn default_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainDatasetSpec {
    pub dims: [usize; 3],
    pub n_ellipsoids: usize,
    pub seed_start: u64,
    pub seed_count: u64,
    #[serde(default = "crate::train_cmd::default_factor")]
    pub downsample_factor: f64,
    #[serde(default)]
    pub diverse: bool,
    #[serde(default)]
    pub files: Vec<std::path::PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserSpec {
    #[serde(default)]
    pub arch: Option<String>,
    pub base_channels: Option<usize>,
    pub channel_mults: Option<Vec<usize>>,
    pub res_blocks: Option<usize>,
    pub attention_levels: Option<Vec<usize>>,
    pub depthwise_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub steps: u64,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub ema_decay: Option<f32>,
    pub ema_start: Option<u64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub schedule_t: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainFileConfig {
    pub dataset: TrainDatasetSpec,
    pub denoiser: DenoiserSpec,
    pub train: TrainSpec,
}

impl TrainFileConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| BenchError::Config(format!("bad train config: {e}")))
    }
}

pub fn training_volumes(spec: &TrainDatasetSpec) -> Result<Vec<ComplexVolume>> {
    let mut vols = Vec::new();
    if spec.files.is_empty() {
        for s in spec.seed_start..spec.seed_start + spec.seed_count {
            vols.push(generate_phantom(
                s,
                (spec.dims[0], spec.dims[1], spec.dims[2]),
                spec.n_ellipsoids,
            )?);
        }
    } else {
        for p in &spec.files {
            vols.push(read_cvol(p)?);
        }
    }
    if spec.downsample_factor < 1.0 {
        vols = vols
            .iter()
            .map(|v| trilinear_downsample(v, spec.downsample_factor))
            .collect::<std::result::Result<_, _>>()?;
    }
    Ok(vols)
}

pub fn build_denoiser_config(spec: &DenoiserSpec) -> Result<DenoiserConfig> {
    let mut cfg = DenoiserConfig::desk_default();
    if let Some(arch) = &spec.arch {
        cfg.arch = match arch.as_str() {
            "unet" => Arch::Unet,
            "inf_unet" => Arch::InfUnet,
            other => return Err(BenchError::Config(format!("unknown arch '{other}'"))),
        };
    }
    if let Some(b) = spec.base_channels {
        cfg.base_channels = b;
    }
    if let Some(m) = &spec.channel_mults {
        cfg.channel_mults = m.clone();
    }
    if let Some(r) = spec.res_blocks {
        cfg.res_blocks = r;
    }
    if let Some(a) = &spec.attention_levels {
        cfg.attention_levels = a.clone();
    }
    if let Some(k) = spec.depthwise_k {
        cfg.depthwise_k = k;
    }
    Ok(cfg)
}

/// Train a prior per the config file and save the checkpoint directory.
pub fn run_training(cfg: &TrainFileConfig, out_dir: &Path) -> Result<TrainReport> {
    let vols = training_volumes(&cfg.dataset)?;
    let source = if cfg.dataset.diverse {
        SliceSource::diverse(vols)?
    } else {
        SliceSource::Static(extract_slices(&vols, &Plane::ALL)?)
    };
    let schedule = build_schedule(
        cfg.train.schedule_t.unwrap_or(diffusion_prior::DEFAULT_T),
        diffusion_prior::DEFAULT_BETA_MIN,
        diffusion_prior::DEFAULT_BETA_MAX,
    )?;
    let denoiser = build_denoiser_config(&cfg.denoiser)?;
    let tcfg = TrainConfig {
        steps: cfg.train.steps,
        batch_size: cfg.train.batch_size.unwrap_or(4),
        lr: cfg.train.lr.unwrap_or(1e-4),
        ema_decay: cfg.train.ema_decay.unwrap_or(0.999),
        ema_start: cfg.train.ema_start.unwrap_or(500),
        seed: cfg.train.seed.unwrap_or(0),
    };
    let mut report = train(&denoiser, &source, &schedule, &tcfg)?;
    report.checkpoint.save(out_dir)?;
    Ok(report)
}
