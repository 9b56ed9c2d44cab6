use serde::{Deserialize, Serialize};

use crate::{PriorError, Result};

/// DDPM noise schedule tables. `beta` follows the linear law
/// `beta_t = beta_min + (t / T) * (beta_max - beta_min)` for `t = 0..T-1`;
/// `alpha_bar` is the cumulative product of `1 - beta`,
/// `sigma = sqrt(1 - alpha_bar)` and `alpha = sqrt(alpha_bar)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(skip)]
    pub beta: Vec<f64>,
    #[serde(skip)]
    pub alpha_bar: Vec<f64>,
    #[serde(skip)]
    pub sigma: Vec<f64>,
    #[serde(skip)]
    pub alpha: Vec<f64>,
}

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 0.0001;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

pub fn build_schedule(t_max: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(PriorError::invalid("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(PriorError::invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )));
    }
    let t_f = t_max as f64;
    let beta: Vec<f64> = (0..t_max)
        .map(|t| beta_min + (t as f64 / t_f) * (beta_max - beta_min))
        .collect();
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut prod = 1.0f64;
    for &b in &beta {
        prod *= 1.0 - b;
        alpha_bar.push(prod);
    }
    let sigma: Vec<f64> = alpha_bar.iter().map(|&a| (1.0 - a).sqrt()).collect();
    let alpha: Vec<f64> = alpha_bar.iter().map(|&a| a.sqrt()).collect();
    Ok(NoiseSchedule {
        t_max,
        beta_min,
        beta_max,
        beta,
        alpha_bar,
        sigma,
        alpha,
    })
}

impl NoiseSchedule {
    pub fn default_ddpm() -> Self {
        build_schedule(DEFAULT_T, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("valid defaults")
    }

    /// Rebuild the derived tables after deserializing the three constants.
    pub fn rebuild(&mut self) -> Result<()> {
        *self = build_schedule(self.t_max, self.beta_min, self.beta_max)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_beta_endpoints() {
        let s = build_schedule(1000, 0.0001, 0.02).unwrap();
        assert_eq!(s.beta[0], 0.0001);
        assert!((s.beta[500] - 0.010050).abs() < 1e-9);
        assert!(s.beta[999] < 0.02);
    }

    #[test]
    fn sigma_matches_direct_product_oracle() {
        let s = build_schedule(1000, 0.0001, 0.02).unwrap();
        for t in 0..s.t_max {
            // direct-product oracle, recomputed from scratch per t
            let mut prod = 1.0f64;
            for u in 0..=t {
                prod *= 1.0 - s.beta[u];
            }
            let sigma_sq = 1.0 - prod;
            assert!(
                (s.sigma[t] * s.sigma[t] - sigma_sq).abs() < 1e-9,
                "t = {t}"
            );
            assert!((s.sigma[t] * s.sigma[t] + s.alpha[t] * s.alpha[t] - 1.0).abs() < 1e-9);
        }
        assert!(s.sigma[999] > 0.999);
    }

    #[test]
    fn betas_nondecreasing_sigma_increasing() {
        let s = build_schedule(400, 0.001, 0.015).unwrap();
        for t in 1..s.t_max {
            assert!(s.beta[t] >= s.beta[t - 1]);
            assert!(s.sigma[t] > s.sigma[t - 1]);
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(build_schedule(0, 0.0001, 0.02).is_err());
        assert!(build_schedule(10, 0.0, 0.02).is_err());
        assert!(build_schedule(10, 0.03, 0.02).is_err());
        assert!(build_schedule(10, 0.1, 1.0).is_err());
    }
}
