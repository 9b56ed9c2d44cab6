use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mesh::axis_coords;
use crate::{Result, VolumeError, C32};

/// Receiver-coil sensitivity profiles covering one acquisition grid.
///
/// Maps are normalized so the per-voxel sum of squared magnitudes is 1,
/// which keeps the multicoil forward operator norm at 1.
#[derive(Debug, Clone)]
pub struct CoilSensitivities {
    pub maps: Vec<Array3<C32>>,
}

impl CoilSensitivities {
    pub fn new(maps: Vec<Array3<C32>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(VolumeError::invalid("coil count must be >= 1"));
        }
        let dims = maps[0].dim();
        if maps.iter().any(|m| m.dim() != dims) {
            return Err(VolumeError::invalid("coil maps must share one shape"));
        }
        Ok(Self { maps })
    }

    pub fn num_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.maps[0].dim()
    }

    /// Per-voxel sum of |S_i|^2.
    pub fn rss_squared(&self) -> Array3<f32> {
        let mut out = Array3::<f32>::zeros(self.dims());
        for m in &self.maps {
            out.zip_mut_with(m, |o, s| *o += s.norm_sqr());
        }
        out
    }
}

/// Smooth synthetic coil maps: Gaussian magnitude lobes centered around the
/// volume boundary with linear phase, normalized so `sum_i |S_i(v)|^2 = 1`
/// at every voxel. Deterministic given `seed`.
pub fn synth_coil_maps(
    dims: (usize, usize, usize),
    num_coils: usize,
    seed: u64,
) -> Result<CoilSensitivities> {
    if num_coils == 0 {
        return Err(VolumeError::invalid("coil count must be >= 1"));
    }
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(VolumeError::invalid("dims must all be >= 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    struct Lobe {
        center: [f32; 3],
        inv_two_sigma_sq: f32,
        phase_k: [f32; 3],
        phase_0: f32,
    }
    let lobes: Vec<Lobe> = (0..num_coils)
        .map(|i| {
            let angle = std::f32::consts::TAU * i as f32 / num_coils as f32
                + rng.gen_range(-0.2..0.2f32);
            let sigma: f32 = rng.gen_range(0.7..1.1);
            Lobe {
                center: [
                    1.15 * angle.cos(),
                    1.15 * angle.sin(),
                    rng.gen_range(-0.6..0.6),
                ],
                inv_two_sigma_sq: 1.0 / (2.0 * sigma * sigma),
                phase_k: [
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                ],
                phase_0: rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI),
            }
        })
        .collect();

    let xs = axis_coords(dims.0);
    let ys = axis_coords(dims.1);
    let zs = axis_coords(dims.2);

    let mut maps: Vec<Array3<C32>> = (0..num_coils).map(|_| Array3::zeros(dims)).collect();
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            for (k, &z) in zs.iter().enumerate() {
                let mut rss = 0.0f32;
                let mut vals = vec![C32::new(0.0, 0.0); num_coils];
                for (c, lobe) in lobes.iter().enumerate() {
                    let dx = x - lobe.center[0];
                    let dy = y - lobe.center[1];
                    let dz = z - lobe.center[2];
                    let mag =
                        (-(dx * dx + dy * dy + dz * dz) * lobe.inv_two_sigma_sq).exp();
                    let phase = lobe.phase_0
                        + lobe.phase_k[0] * x
                        + lobe.phase_k[1] * y
                        + lobe.phase_k[2] * z;
                    let v = C32::from_polar(mag, phase);
                    rss += v.norm_sqr();
                    vals[c] = v;
                }
                let inv = 1.0 / rss.sqrt();
                for (c, v) in vals.into_iter().enumerate() {
                    maps[c][[i, j, k]] = v * inv;
                }
            }
        }
    }

    CoilSensitivities::new(maps)
}
