use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Result, SamplingError};

/// Variable-density slope of the Poisson-disc radius law r(rho) = r0 * (1 + s * rho).
pub const POISSON_DENSITY_SLOPE: f64 = 2.0;

/// Fraction of min(H, D) used as the Gaussian mask's k-space sigma.
pub const GAUSSIAN_SIGMA_FRAC: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskKind {
    Full,
    /// Variable-density Poisson disc; carries the calibrated base radius and
    /// density slope so the spacing constraint can be re-checked later.
    Poisson { r0: f64, slope: f64 },
    Gaussian { sigma_frac: f64 },
}

impl MaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::Full => "full",
            MaskKind::Poisson { .. } => "poisson",
            MaskKind::Gaussian { .. } => "gaussian",
        }
    }
}

/// Boolean sampling pattern on the (H, D) phase-encode plane, broadcast
/// along the fully-sampled readout axis of length `readout_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub pattern: Array2<bool>,
    pub readout_len: usize,
    /// Fully-sampled center block dims (h_acs, d_acs).
    pub acs: (usize, usize),
    pub kind: MaskKind,
    pub achieved_r: f64,
}

impl SamplingMask {
    pub fn new(
        pattern: Array2<bool>,
        readout_len: usize,
        acs: (usize, usize),
        kind: MaskKind,
    ) -> Result<Self> {
        let count = pattern.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(SamplingError::invalid("mask contains no samples"));
        }
        let (h, d) = pattern.dim();
        let achieved_r = (h * d) as f64 / count as f64;
        Ok(Self {
            pattern,
            readout_len,
            acs,
            kind,
            achieved_r,
        })
    }

    /// All-true mask over `shape` with readout length `readout_len`.
    pub fn full(shape: (usize, usize), readout_len: usize) -> Self {
        Self {
            pattern: Array2::from_elem(shape, true),
            readout_len,
            acs: shape,
            kind: MaskKind::Full,
            achieved_r: 1.0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pattern.dim()
    }

    pub fn num_sampled(&self) -> usize {
        self.pattern.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.pattern.iter().all(|&b| b)
    }

    /// Index ranges of the centered ACS block.
    pub fn acs_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (h, d) = self.shape();
        acs_ranges(h, d, self.acs)
    }
}

fn acs_ranges(
    h: usize,
    d: usize,
    acs: (usize, usize),
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let h0 = (h - acs.0) / 2;
    let d0 = (d - acs.1) / 2;
    (h0..h0 + acs.0, d0..d0 + acs.1)
}

fn validate_mask_args(shape: (usize, usize), r: f64, acs: (usize, usize)) -> Result<()> {
    if shape.0 == 0 || shape.1 == 0 {
        return Err(SamplingError::invalid("mask shape must be >= 1 per axis"));
    }
    if acs.0 > shape.0 || acs.1 > shape.1 {
        return Err(SamplingError::invalid(format!(
            "ACS block {:?} does not fit in shape {:?}",
            acs, shape
        )));
    }
    if !(r >= 1.0) || !r.is_finite() {
        return Err(SamplingError::invalid(format!(
            "acceleration must be >= 1, got {r}"
        )));
    }
    Ok(())
}

fn feasibility_check(shape: (usize, usize), r: f64, acs: (usize, usize)) -> Result<()> {
    let total = (shape.0 * shape.1) as f64;
    let acs_count = (acs.0 * acs.1) as f64;
    // Even with an otherwise empty complement the ACS block caps achieved_R.
    let max_r = total / (acs_count + 1.0);
    if 0.9 * r > max_r {
        return Err(SamplingError::InfeasibleAcceleration(format!(
            "R={r} unreachable: ACS {:?} alone caps achieved R at {max_r:.2}",
            acs
        )));
    }
    Ok(())
}

/// Local Poisson-disc radius at normalized center distance `rho`.
#[inline]
pub fn poisson_radius(r0: f64, slope: f64, rho: f64) -> f64 {
    r0 * (1.0 + slope * rho)
}

struct DartBoard {
    h: usize,
    d: usize,
    center: (f64, f64),
    inv_max_dist: f64,
}

impl DartBoard {
    fn new(h: usize, d: usize) -> Self {
        let center = ((h as f64 - 1.0) / 2.0, (d as f64 - 1.0) / 2.0);
        let max_dist = (center.0.max(h as f64 - 1.0 - center.0).powi(2)
            + center.1.max(d as f64 - 1.0 - center.1).powi(2))
        .sqrt()
        .max(1e-12);
        Self {
            h,
            d,
            center,
            inv_max_dist: 1.0 / max_dist,
        }
    }

    fn rho(&self, p: (usize, usize)) -> f64 {
        let dy = p.0 as f64 - self.center.0;
        let dx = p.1 as f64 - self.center.1;
        (dy * dy + dx * dx).sqrt() * self.inv_max_dist
    }

    /// One dart-throwing pass at base radius `r0` over a fixed candidate
    /// order; returns accepted points.
    fn throw(&self, r0: f64, slope: f64, candidates: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let r_max = poisson_radius(r0, slope, 1.0);
        let cell = r_max.max(1.0);
        let gh = (self.h as f64 / cell).ceil() as usize + 1;
        let gd = (self.d as f64 / cell).ceil() as usize + 1;
        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); gh * gd];
        let bucket_of = |p: (usize, usize)| {
            let by = (p.0 as f64 / cell) as usize;
            let bx = (p.1 as f64 / cell) as usize;
            (by.min(gh - 1), bx.min(gd - 1))
        };
        let mut accepted = Vec::new();
        'cand: for &p in candidates {
            let r = poisson_radius(r0, slope, self.rho(p));
            let r_sq = r * r;
            let (by, bx) = bucket_of(p);
            let y0 = by.saturating_sub(1);
            let x0 = bx.saturating_sub(1);
            for gy in y0..=(by + 1).min(gh - 1) {
                for gx in x0..=(bx + 1).min(gd - 1) {
                    for &q in &buckets[gy * gd + gx] {
                        let dy = p.0 as f64 - q.0 as f64;
                        let dx = p.1 as f64 - q.1 as f64;
                        if dy * dy + dx * dx < r_sq {
                            continue 'cand;
                        }
                    }
                }
            }
            buckets[(by * gd) + bx].push(p);
            accepted.push(p);
        }
        accepted
    }
}

/// Variable-density Poisson-disc undersampling mask.
///
/// Candidate points are accepted iff no previously accepted point lies
/// within the local radius `r(rho) = r0 * (1 + slope * rho)`, `rho` being the
/// normalized distance from the k-space center. `r0` is bisected until the
/// achieved acceleration lands within 10% of the request; the centered ACS
/// block is forced true. Deterministic given `seed`.
pub fn gen_poisson_mask(
    shape: (usize, usize),
    r: f64,
    acs: (usize, usize),
    seed: u64,
) -> Result<SamplingMask> {
    validate_mask_args(shape, r, acs)?;
    let (h, d) = shape;
    let slope = POISSON_DENSITY_SLOPE;

    if r == 1.0 {
        let pattern = Array2::from_elem(shape, true);
        return SamplingMask::new(pattern, 0, acs, MaskKind::Poisson { r0: 0.0, slope });
    }
    feasibility_check(shape, r, acs)?;

    let (acs_h, acs_d) = acs_ranges(h, d, acs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..d).map(move |x| (y, x)))
        .filter(|&(y, x)| !(acs_h.contains(&y) && acs_d.contains(&x)))
        .collect();
    candidates.shuffle(&mut rng);

    let board = DartBoard::new(h, d);
    let acs_count = acs.0 * acs.1;
    let total = (h * d) as f64;

    let build = |accepted: &[(usize, usize)]| {
        let mut pattern = Array2::from_elem(shape, false);
        for &(y, x) in accepted {
            pattern[[y, x]] = true;
        }
        for y in acs_h.clone() {
            for x in acs_d.clone() {
                pattern[[y, x]] = true;
            }
        }
        pattern
    };

    let mut lo = 0.0f64;
    let mut hi = ((h * h + d * d) as f64).sqrt();
    for _ in 0..64 {
        let r0 = 0.5 * (lo + hi);
        let accepted = board.throw(r0, slope, &candidates);
        let achieved = total / (accepted.len() + acs_count) as f64;
        if achieved >= 0.9 * r && achieved <= 1.1 * r {
            let pattern = build(&accepted);
            return SamplingMask::new(pattern, 0, acs, MaskKind::Poisson { r0, slope });
        }
        if achieved < 0.9 * r {
            lo = r0; // too dense, grow the exclusion radius
        } else {
            hi = r0;
        }
    }
    Err(SamplingError::InfeasibleAcceleration(format!(
        "bisection on r0 did not reach R in [{:.2}, {:.2}]",
        0.9 * r,
        1.1 * r
    )))
}

/// Gaussian-density undersampling mask: exactly `ceil(H*D/R)` locations
/// drawn without replacement with probability proportional to
/// `exp(-|k|^2 / (2 sigma^2))`, `sigma = 0.25 * min(H, D)`. The forced ACS
/// block counts against the draw budget so the achieved acceleration stays
/// on target. Deterministic given `seed`.
pub fn gen_gaussian_mask(
    shape: (usize, usize),
    r: f64,
    acs: (usize, usize),
    seed: u64,
) -> Result<SamplingMask> {
    validate_mask_args(shape, r, acs)?;
    let (h, d) = shape;
    let kind = MaskKind::Gaussian {
        sigma_frac: GAUSSIAN_SIGMA_FRAC,
    };

    if r == 1.0 {
        let pattern = Array2::from_elem(shape, true);
        return SamplingMask::new(pattern, 0, acs, kind);
    }

    let total = h * d;
    let n_draw = (total as f64 / r).ceil() as usize;
    let acs_count = acs.0 * acs.1;
    if acs_count >= n_draw {
        return Err(SamplingError::InfeasibleAcceleration(format!(
            "R={r} needs only {n_draw} samples but the ACS block holds {acs_count}"
        )));
    }

    let sigma = GAUSSIAN_SIGMA_FRAC * h.min(d) as f64;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (d as f64 - 1.0) / 2.0;
    let (acs_h, acs_d) = acs_ranges(h, d, acs);

    // Weighted sampling without replacement via exponential sort keys:
    // taking the n largest ln(u)/w realizes draws with probability
    // proportional to w. The rng consumes one draw per cell regardless of
    // ACS membership so patterns stay comparable across ACS sizes.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(total);
    for idx in 0..total {
        let y = idx / d;
        let x = idx % d;
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        if acs_h.contains(&y) && acs_d.contains(&x) {
            continue; // forced on below
        }
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let log_w = -(dy * dy + dx * dx) * inv_two_sigma_sq;
        keyed.push((u.ln() / log_w.exp(), idx));
    }
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    let mut pattern = Array2::from_elem(shape, false);
    for y in acs_h.clone() {
        for x in acs_d.clone() {
            pattern[[y, x]] = true;
        }
    }
    for &(_, idx) in keyed.iter().take(n_draw - acs_count) {
        pattern[[idx / d, idx % d]] = true;
    }
    SamplingMask::new(pattern, 0, acs, kind)
}
