use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mesh::axis_coords;
use crate::{ComplexVolume, Result, VolumeError, C32};

struct Ellipsoid {
    center: [f32; 3],
    inv_semi_axes: [f32; 3],
    rot: [[f32; 3]; 3],
    magnitude: f32,
}

impl Ellipsoid {
    fn contains(&self, p: [f32; 3]) -> bool {
        let d = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ];
        // u = R^T d, then check sum (u_j / a_j)^2 <= 1
        let mut q = 0.0f32;
        for j in 0..3 {
            let u = self.rot[0][j] * d[0] + self.rot[1][j] * d[1] + self.rot[2][j] * d[2];
            let s = u * self.inv_semi_axes[j];
            q += s * s;
        }
        q <= 1.0
    }
}

fn rot_from_quat(q: [f32; 4]) -> [[f32; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Uniform random rotation (Shoemake's subgroup method).
fn random_quat(rng: &mut impl Rng) -> [f32; 4] {
    let u1: f32 = rng.gen();
    let u2: f32 = rng.gen::<f32>() * std::f32::consts::TAU;
    let u3: f32 = rng.gen::<f32>() * std::f32::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    [a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos()]
}

/// Piecewise-smooth synthetic test volume: a sum of randomly placed
/// anisotropic ellipsoid indicators under a smooth low-order polynomial
/// phase. Magnitude is normalized to unit standard deviation over the
/// support. Deterministic given `seed`.
pub fn generate_phantom(
    seed: u64,
    dims: (usize, usize, usize),
    n_ellipsoids: usize,
) -> Result<ComplexVolume> {
    if dims.0 < 8 || dims.1 < 8 || dims.2 < 8 {
        return Err(VolumeError::invalid(format!(
            "phantom dims must all be >= 8, got {:?}",
            dims
        )));
    }
    if n_ellipsoids == 0 {
        return Err(VolumeError::invalid("n_ellipsoids must be >= 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ellipsoids: Vec<Ellipsoid> = (0..n_ellipsoids)
        .map(|_| {
            let center = [
                rng.gen_range(-0.55..0.55),
                rng.gen_range(-0.55..0.55),
                rng.gen_range(-0.55..0.55),
            ];
            let semi = [
                rng.gen_range(0.12..0.45),
                rng.gen_range(0.12..0.45),
                rng.gen_range(0.12..0.45),
            ];
            Ellipsoid {
                center,
                inv_semi_axes: [1.0 / semi[0], 1.0 / semi[1], 1.0 / semi[2]],
                rot: rot_from_quat(random_quat(&mut rng)),
                magnitude: rng.gen_range(0.2..1.0),
            }
        })
        .collect();

    // Quadratic polynomial phase over normalized coordinates.
    let phase_coeffs: [f32; 10] = std::array::from_fn(|_| rng.gen_range(-0.8..0.8));

    let xs = axis_coords(dims.0);
    let ys = axis_coords(dims.1);
    let zs = axis_coords(dims.2);

    let mut data = Array3::<C32>::zeros(dims);
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            for (k, &z) in zs.iter().enumerate() {
                let p = [x, y, z];
                let mut mag = 0.0f32;
                for e in &ellipsoids {
                    if e.contains(p) {
                        mag += e.magnitude;
                    }
                }
                if mag > 0.0 {
                    let c = &phase_coeffs;
                    let phase = c[0]
                        + c[1] * x
                        + c[2] * y
                        + c[3] * z
                        + c[4] * x * y
                        + c[5] * x * z
                        + c[6] * y * z
                        + c[7] * x * x
                        + c[8] * y * y
                        + c[9] * z * z;
                    data[[i, j, k]] = C32::from_polar(mag, phase);
                }
            }
        }
    }

    // Unit-std magnitude over the support; an RMS fallback covers the
    // degenerate constant-magnitude case.
    let support: Vec<f32> = data
        .iter()
        .filter(|z| z.norm_sqr() > 0.0)
        .map(|z| z.norm())
        .collect();
    if support.is_empty() {
        return Err(VolumeError::DegenerateInput(
            "phantom support is empty; widen ellipsoid parameters".into(),
        ));
    }
    let n = support.len() as f64;
    let mean = support.iter().map(|&m| m as f64).sum::<f64>() / n;
    let var = support
        .iter()
        .map(|&m| (m as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let mut scale = var.sqrt();
    if scale < 1e-6 {
        scale = (support.iter().map(|&m| (m as f64).powi(2)).sum::<f64>() / n).sqrt();
    }
    let inv = (1.0 / scale) as f32;
    data.mapv_inplace(|z| z * inv);

    ComplexVolume::new(data, [1.0; 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_phantom(7, (16, 16, 16), 6).unwrap();
        let b = generate_phantom(7, (16, 16, 16), 6).unwrap();
        assert_eq!(a.data, b.data);
        let c = generate_phantom(8, (16, 16, 16), 6).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn zero_ellipsoids_rejected() {
        assert!(generate_phantom(1, (16, 16, 16), 0).is_err());
    }

    #[test]
    fn small_dims_rejected() {
        assert!(generate_phantom(1, (4, 16, 16), 3).is_err());
    }

    #[test]
    fn support_magnitude_has_unit_std() {
        let v = generate_phantom(1, (32, 32, 32), 12).unwrap();
        let mags: Vec<f64> = v
            .data
            .iter()
            .filter(|z| z.norm_sqr() > 0.0)
            .map(|z| z.norm() as f64)
            .collect();
        let n = mags.len() as f64;
        let mean = mags.iter().sum::<f64>() / n;
        let std = (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 1.0).abs() < 1e-3, "std = {std}");
    }
}
