use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

fn default_voxel() -> [f32; 3] {
    [1.0; 3]
}

fn default_noise() -> f32 {
    0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Seeded synthetic volumes.
    Phantom {
        dims: [usize; 3],
        n_ellipsoids: usize,
        seeds: Vec<u64>,
        #[serde(default = "default_voxel")]
        voxel_size_mm: [f32; 3],
    },
    /// Pre-existing `.cvol` volumes.
    Files { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKindSpec,
    pub accels: Vec<f64>,
    pub acs: [usize; 2],
    #[serde(default = "default_noise")]
    pub noise_sigma: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKindSpec {
    Poisson,
    Gaussian,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoilSpec {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSpec {
    pub tag: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    ZeroFilled,
    Variational,
    Dds,
    L1Wavelet,
}

impl MethodSpec {
    pub fn name(self) -> &'static str {
        match self {
            MethodSpec::ZeroFilled => "zero_filled",
            MethodSpec::Variational => "variational",
            MethodSpec::Dds => "dds",
            MethodSpec::L1Wavelet => "l1wavelet",
        }
    }

    pub fn needs_prior(self) -> bool {
        matches!(self, MethodSpec::Variational | MethodSpec::Dds)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconSpec {
    pub method: MethodSpec,
    // variational settings
    pub lambda: Option<f32>,
    pub iters: Option<usize>,
    pub step_size: Option<f32>,
    pub t_prime: Option<usize>,
    pub slices_per_plane: Option<usize>,
    pub slab_size: Option<usize>,
    pub representation: Option<variational_recon::Representation>,
    pub kernel_interp: Option<variational_recon::KernelInterpChoice>,
    pub gaussian_count: Option<usize>,
    pub inn_width: Option<usize>,
    pub inn_depth: Option<usize>,
    pub inn_features: Option<usize>,
    pub inn_scale: Option<f32>,
    // sampler settings
    pub n_steps: Option<usize>,
    pub eta: Option<f64>,
    pub rho: Option<f64>,
    pub cg_iters: Option<usize>,
    pub uncond_every: Option<usize>,
    // compressed sensing settings
    pub mu: Option<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ShiftSpec {
    /// Downsample factors applied to the ground truth before simulation;
    /// 1.0 reconstructs at the native grid.
    pub v_recon_factors: Vec<f64>,
}

/// One benchmark experiment: the cross product of volumes, accelerations,
/// priors, and reconstruction resolutions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub coils: CoilSpec,
    pub masks: MaskSpec,
    #[serde(default)]
    pub priors: Vec<PriorSpec>,
    pub recon: ReconSpec,
    #[serde(default)]
    pub shift: ShiftSpec,
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| BenchError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.masks.accels.iter().any(|&r| r < 1.0) {
            return Err(BenchError::Config("accelerations must be >= 1".into()));
        }
        match &self.dataset {
            DatasetSpec::Phantom { seeds, dims, .. } => {
                if seeds.is_empty() {
                    return Err(BenchError::Config("need at least one volume seed".into()));
                }
                if dims.iter().any(|&d| d < 8) {
                    return Err(BenchError::Config("phantom dims must be >= 8".into()));
                }
            }
            DatasetSpec::Files { paths } => {
                if paths.is_empty() {
                    return Err(BenchError::Config("need at least one volume file".into()));
                }
                for p in paths {
                    if !p.exists() {
                        return Err(BenchError::Config(format!(
                            "volume file {} does not exist",
                            p.display()
                        )));
                    }
                }
            }
        }
        if self.recon.method.needs_prior() {
            if self.priors.is_empty() {
                return Err(BenchError::Config(format!(
                    "method {} requires at least one prior checkpoint",
                    self.recon.method.name()
                )));
            }
            for p in &self.priors {
                if !p.path.join("meta.json").exists() {
                    return Err(BenchError::Config(format!(
                        "prior '{}' checkpoint missing at {}",
                        p.tag,
                        p.path.display()
                    )));
                }
            }
        }
        let factors = if self.shift.v_recon_factors.is_empty() {
            &[1.0][..]
        } else {
            &self.shift.v_recon_factors
        };
        if factors.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(BenchError::Config(
                "v_recon factors must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// ACS block scaled down proportionally for small phase-encode planes.
pub fn acs_for(shape: (usize, usize), requested: [usize; 2]) -> (usize, usize) {
    let scale = |acs: usize, n: usize| -> usize {
        if n >= 64 {
            acs.min(n)
        } else {
            ((acs * n).div_ceil(64)).clamp(2, n)
        }
    };
    (scale(requested[0], shape.0), scale(requested[1], shape.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_config() {
        let text = r#"
seed = 7
out_dir = "/tmp/exp"

[dataset]
kind = "phantom"
dims = [32, 32, 32]
n_ellipsoids = 10
seeds = [100, 101]

[coils]
count = 4
seed = 3

[masks]
kind = "poisson"
accels = [4.0, 8.0]
acs = [16, 16]

[recon]
method = "zero_filled"

[shift]
v_recon_factors = [1.0]
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.masks.accels.len(), 2);
        assert_eq!(cfg.recon.method, MethodSpec::ZeroFilled);
    }

    #[test]
    fn acs_scales_down_for_small_planes() {
        assert_eq!(acs_for((128, 128), [16, 16]), (16, 16));
        assert_eq!(acs_for((32, 32), [16, 16]), (8, 8));
        assert_eq!(acs_for((16, 64), [16, 16]), (4, 16));
    }

    #[test]
    fn prior_required_for_variational() {
        let text = r#"
seed = 0
out_dir = "/tmp/x"
[dataset]
kind = "phantom"
dims = [16, 16, 16]
n_ellipsoids = 4
seeds = [0]
[coils]
count = 2
seed = 0
[masks]
kind = "poisson"
accels = [4.0]
acs = [8, 8]
[recon]
method = "variational"
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
