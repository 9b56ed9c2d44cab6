use serde::{Deserialize, Serialize};

use crate::{ReconError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Voxel,
    GridResample,
    Inn,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelInterpChoice {
    None,
    Bilinear,
    FourierPad,
    ImagePad,
}

/// Hyperparameters of one variational reconstruction run. Tuned values
/// (lambda, step size, iteration budget) come from configuration files, so
/// the constructor takes them explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconConfig {
    /// Regularization weight.
    pub lambda: f32,
    pub iters: usize,
    pub step_size: f32,
    /// Upper bound (exclusive) for sampled regularization timesteps;
    /// `t_max` selects the full training range.
    pub t_prime: usize,
    /// Slices per plane per iteration.
    pub slices_per_plane: usize,
    pub slab_size: usize,
    pub seed: u64,
    pub representation: Representation,
    pub kernel_interp: KernelInterpChoice,
    /// Pixel size for resolution-matched slice views; `None` takes the
    /// denoiser checkpoint's training pixel size.
    pub v_train_override: Option<[f32; 2]>,
    /// Gaussian-backend cloud size.
    pub gaussian_count: usize,
}

impl ReconConfig {
    pub fn new(lambda: f32, iters: usize, step_size: f32, t_prime: usize, seed: u64) -> Self {
        Self {
            lambda,
            iters,
            step_size,
            t_prime,
            slices_per_plane: 50,
            slab_size: 4,
            seed,
            representation: Representation::Voxel,
            kernel_interp: KernelInterpChoice::None,
            v_train_override: None,
            gaussian_count: 200_000,
        }
    }

    pub fn with_representation(mut self, r: Representation) -> Self {
        self.representation = r;
        self
    }

    pub fn with_slices(mut self, s: usize, slab_size: usize) -> Self {
        self.slices_per_plane = s;
        self.slab_size = slab_size;
        self
    }

    pub fn validate(&self, t_max: usize, dims: (usize, usize, usize)) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(ReconError::invalid("lambda must be finite and >= 0"));
        }
        if self.t_prime < 1 || self.t_prime > t_max {
            return Err(ReconError::invalid(format!(
                "t_prime {} outside [1, {t_max}]",
                self.t_prime
            )));
        }
        if self.slices_per_plane < 1 {
            return Err(ReconError::invalid("need at least one slice per plane"));
        }
        let min_extent = dims.0.min(dims.1).min(dims.2);
        if self.slab_size < 1 || self.slab_size > min_extent {
            return Err(ReconError::invalid(format!(
                "slab size {} outside [1, {min_extent}]",
                self.slab_size
            )));
        }
        if !(self.step_size > 0.0) {
            return Err(ReconError::invalid("step size must be positive"));
        }
        Ok(())
    }
}
