use ndarray::{Array3, Axis};

use sampling_forward::{adjoint, forward, MulticoilKSpace};
use volume_core::{CoilSensitivities, ComplexVolume, C32};

use crate::{BaselineError, Result};

/// Orthonormal Daubechies-4 analysis taps.
const H: [f64; 4] = {
    // (1±sqrt(3)) / (4 sqrt(2)) family, hard-coded to keep the constant exact
    [
        0.48296291314469025,  // (1 + sqrt 3) / (4 sqrt 2)
        0.8365163037378079,   // (3 + sqrt 3) / (4 sqrt 2)
        0.22414386804185735,  // (3 - sqrt 3) / (4 sqrt 2)
        -0.12940952255092145, // (1 - sqrt 3) / (4 sqrt 2)
    ]
};

pub const DWT_LEVELS: usize = 3;

fn g(k: usize) -> f64 {
    // quadrature mirror: g[k] = (-1)^k h[3-k]
    let s = if k % 2 == 0 { 1.0 } else { -1.0 };
    s * H[3 - k]
}

/// One periodic analysis step along a lane of even length `n`: first half
/// approximation, second half detail.
fn dwt_lane(lane: &mut [C32], scratch: &mut Vec<C32>) {
    let n = lane.len();
    debug_assert!(n % 2 == 0);
    scratch.clear();
    scratch.resize(n, C32::new(0.0, 0.0));
    let half = n / 2;
    for i in 0..half {
        let mut a = C32::new(0.0, 0.0);
        let mut d = C32::new(0.0, 0.0);
        for k in 0..4 {
            let v = lane[(2 * i + k) % n];
            a += v * H[k] as f32;
            d += v * g(k) as f32;
        }
        scratch[i] = a;
        scratch[half + i] = d;
    }
    lane.copy_from_slice(scratch);
}

/// Inverse of `dwt_lane`.
fn idwt_lane(lane: &mut [C32], scratch: &mut Vec<C32>) {
    let n = lane.len();
    let half = n / 2;
    scratch.clear();
    scratch.resize(n, C32::new(0.0, 0.0));
    for i in 0..half {
        let a = lane[i];
        let d = lane[half + i];
        for k in 0..4 {
            let idx = (2 * i + k) % n;
            scratch[idx] += a * H[k] as f32 + d * g(k) as f32;
        }
    }
    lane.copy_from_slice(scratch);
}

fn apply_axis(data: &mut Array3<C32>, axis: usize, extent: [usize; 3], inverse: bool) {
    let mut scratch = Vec::new();
    let mut lane_buf = Vec::new();
    // restrict to the current low-pass block
    let view = ndarray::s![0..extent[0], 0..extent[1], 0..extent[2]];
    let mut block = data.slice_mut(view);
    for mut lane in block.lanes_mut(Axis(axis)) {
        lane_buf.clear();
        lane_buf.extend(lane.iter().cloned());
        if inverse {
            idwt_lane(&mut lane_buf, &mut scratch);
        } else {
            dwt_lane(&mut lane_buf, &mut scratch);
        }
        for (dst, src) in lane.iter_mut().zip(lane_buf.iter()) {
            *dst = *src;
        }
    }
}

fn check_dims(dims: (usize, usize, usize), levels: usize) -> bool {
    let div = 1usize << levels;
    dims.0 % div == 0 && dims.1 % div == 0 && dims.2 % div == 0
}

/// Separable 3D orthonormal wavelet analysis with periodic extension; the
/// low-pass block shrinks by half per level along every axis.
pub fn dwt3_forward(data: &mut Array3<C32>, levels: usize) {
    let dims = data.dim();
    assert!(check_dims(dims, levels), "dims must divide 2^levels");
    let mut extent = [dims.0, dims.1, dims.2];
    for _ in 0..levels {
        for axis in 0..3 {
            apply_axis(data, axis, extent, false);
        }
        extent = [extent[0] / 2, extent[1] / 2, extent[2] / 2];
    }
}

pub fn dwt3_inverse(data: &mut Array3<C32>, levels: usize) {
    let dims = data.dim();
    assert!(check_dims(dims, levels), "dims must divide 2^levels");
    let mut extents = Vec::with_capacity(levels);
    let mut e = [dims.0, dims.1, dims.2];
    for _ in 0..levels {
        extents.push(e);
        e = [e[0] / 2, e[1] / 2, e[2] / 2];
    }
    for extent in extents.into_iter().rev() {
        for axis in (0..3).rev() {
            apply_axis(data, axis, extent, true);
        }
    }
}

/// Proximal map of `tau * |.|_1` for complex scalars:
/// `c * max(1 - tau / |c|, 0)`.
pub fn soft_threshold_complex(c: C32, tau: f32) -> C32 {
    debug_assert!(tau >= 0.0);
    let mag = c.norm();
    if mag <= tau {
        C32::new(0.0, 0.0)
    } else {
        c * (1.0 - tau / mag)
    }
}

fn pad_to_multiple(data: &Array3<C32>, levels: usize) -> (Array3<C32>, (usize, usize, usize)) {
    let dims = data.dim();
    if check_dims(dims, levels) {
        return (data.clone(), dims);
    }
    let div = 1usize << levels;
    let pd = (
        dims.0.div_ceil(div) * div,
        dims.1.div_ceil(div) * div,
        dims.2.div_ceil(div) * div,
    );
    let mut out = Array3::<C32>::zeros(pd);
    out.slice_mut(ndarray::s![0..dims.0, 0..dims.1, 0..dims.2])
        .assign(data);
    (out, dims)
}

/// Apply the wavelet soft-threshold prox, padding internally when the dims
/// do not divide the level count.
fn wavelet_prox(data: &Array3<C32>, tau: f32, levels: usize) -> Array3<C32> {
    let dims = data.dim();
    let (mut padded, orig) = pad_to_multiple(data, levels);
    dwt3_forward(&mut padded, levels);
    padded.mapv_inplace(|c| soft_threshold_complex(c, tau));
    dwt3_inverse(&mut padded, levels);
    if padded.dim() == dims {
        padded
    } else {
        padded
            .slice(ndarray::s![0..orig.0, 0..orig.1, 0..orig.2])
            .to_owned()
    }
}

fn l1_wavelet_norm(data: &Array3<C32>, levels: usize) -> f64 {
    let (mut padded, _) = pad_to_multiple(data, levels);
    dwt3_forward(&mut padded, levels);
    padded.iter().map(|c| c.norm() as f64).sum()
}

#[derive(Debug, Clone)]
pub struct FistaReport {
    pub objective: Vec<f64>,
    pub iterations_run: usize,
}

/// L1-wavelet regularized least squares solved with monotone (restarting)
/// FISTA at unit step (the forward operator has norm at most one). Stops
/// after `iters` steps or when the relative iterate change drops below 1e-6.
pub fn reconstruct_l1wavelet(
    ksp: &MulticoilKSpace,
    maps: &CoilSensitivities,
    mu: f32,
    iters: usize,
) -> Result<(ComplexVolume, FistaReport)> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(BaselineError::invalid("mu must be finite and >= 0"));
    }
    let dims = ksp.dims();
    let levels = DWT_LEVELS;

    let grad = |x: &Array3<C32>| -> Result<(Array3<C32>, f64)> {
        let vol = ComplexVolume::new(x.clone(), ksp.voxel_size)?;
        let ax = forward(&vol, maps, &ksp.mask)?;
        let mut residual = ax;
        let mut data_term = 0.0f64;
        for (r, y) in residual.coils.iter_mut().zip(ksp.coils.iter()) {
            ndarray::Zip::from(r).and(y).for_each(|rv, &yv| {
                *rv -= yv;
                data_term += rv.norm_sqr() as f64;
            });
        }
        Ok((adjoint(&residual, maps)?.data, 0.5 * data_term))
    };

    let objective = |x: &Array3<C32>| -> Result<f64> {
        let (_, data_term) = grad(x)?;
        Ok(data_term + mu as f64 * l1_wavelet_norm(x, levels))
    };

    let mut x = Array3::<C32>::zeros(dims);
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut trace = Vec::with_capacity(iters);
    let mut best_obj = f64::INFINITY;
    let mut ran = 0;

    for _ in 0..iters {
        ran += 1;
        let (g, _) = grad(&y)?;
        let mut z = y.clone();
        ndarray::Zip::from(&mut z).and(&g).for_each(|z, &g| *z -= g);
        let x_next = wavelet_prox(&z, mu, levels);

        let obj = objective(&x_next)?;
        if !obj.is_finite() {
            return Err(BaselineError::Numerical("FISTA objective diverged".into()));
        }
        // monotone variant: restart momentum when the objective rebounds
        let (x_keep, restarted) = if obj <= best_obj {
            best_obj = obj;
            (x_next, false)
        } else {
            (x.clone(), true)
        };
        trace.push(best_obj);

        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = if restarted {
            theta = 1.0;
            0.0
        } else {
            let b = (theta - 1.0) / theta_next;
            theta = theta_next;
            b
        } as f32;

        let mut rel_num = 0.0f64;
        let mut rel_den = 0.0f64;
        ndarray::Zip::from(&mut y).and(&x_keep).and(&x).for_each(|y, &xn, &xo| {
            let d = xn - xo;
            rel_num += d.norm_sqr() as f64;
            rel_den += xn.norm_sqr() as f64;
            *y = xn + d * beta;
        });
        x = x_keep;
        if rel_den > 0.0 && (rel_num / rel_den).sqrt() < 1e-6 {
            break;
        }
    }

    let unscale = 1.0 / ksp.scale;
    Ok((
        ComplexVolume::new(x.mapv(|z| z * unscale), ksp.voxel_size)?,
        FistaReport {
            objective: trace,
            iterations_run: ran,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sampling_forward::{gen_poisson_mask, mvue, SamplingMask};
    use volume_core::{generate_phantom, synth_coil_maps};

    #[test]
    fn soft_threshold_values() {
        assert_eq!(
            soft_threshold_complex(C32::new(0.3, 0.0), 0.5),
            C32::new(0.0, 0.0)
        );
        let r = soft_threshold_complex(C32::new(2.0, 0.0), 0.5);
        assert!((r.re - 1.5).abs() < 1e-7 && r.im == 0.0);
        let r = soft_threshold_complex(C32::new(3.0, 4.0), 1.0);
        assert!((r.re - 2.4).abs() < 1e-6 && (r.im - 3.2).abs() < 1e-6);
    }

    #[test]
    fn soft_threshold_is_the_prox_map() {
        // brute-force grid search over z of 0.5 |z - c|^2 + tau |z|
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let c = C32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let tau: f32 = rng.gen_range(0.05..0.8);
            let analytic = soft_threshold_complex(c, tau);
            let obj = |z: C32| 0.5 * (z - c).norm_sqr() + tau * z.norm();
            let mut best = f32::INFINITY;
            let steps = 401;
            for i in 0..steps {
                for j in 0..steps {
                    let z = C32::new(
                        -1.0 + 2.0 * i as f32 / (steps - 1) as f32,
                        -1.0 + 2.0 * j as f32 / (steps - 1) as f32,
                    );
                    best = best.min(obj(z));
                }
            }
            let grid_step = 2.0 / (steps - 1) as f32;
            assert!(
                obj(analytic) <= best + grid_step,
                "prox {analytic} worse than grid minimum"
            );
        }
    }

    #[test]
    fn wavelet_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array3::from_shape_simple_fn((16, 16, 16), || {
            C32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut w = data.clone();
        dwt3_forward(&mut w, 3);
        let e0: f64 = data.iter().map(|z| z.norm_sqr() as f64).sum();
        let e1: f64 = w.iter().map(|z| z.norm_sqr() as f64).sum();
        assert!((e0 - e1).abs() / e0 < 1e-6, "energy {e0} vs {e1}");
        dwt3_inverse(&mut w, 3);
        let mut num = 0.0f64;
        for (a, b) in w.iter().zip(data.iter()) {
            num += (a - b).norm_sqr() as f64;
        }
        assert!((num / e0).sqrt() < 1e-6, "round trip error");
    }

    #[test]
    fn zero_mu_full_mask_matches_mvue() {
        let dims = (16, 16, 16);
        let x = generate_phantom(1, dims, 6).unwrap();
        let maps = synth_coil_maps(dims, 3, 8).unwrap();
        let mask = SamplingMask::full((16, 16), 16);
        let ksp = forward(&x, &maps, &mask).unwrap();
        let reference = mvue(&ksp, &maps).unwrap();
        let (out, _) = reconstruct_l1wavelet(&ksp, &maps, 0.0, 30).unwrap();
        let rel = out.rel_err(&reference);
        assert!(rel < 1e-3, "rel {rel}");
    }

    #[test]
    fn objective_is_non_increasing() {
        let dims = (16, 16, 16);
        let x = generate_phantom(2, dims, 6).unwrap();
        let maps = synth_coil_maps(dims, 2, 3).unwrap();
        let mask = gen_poisson_mask((16, 16), 3.0, (6, 6), 0).unwrap();
        let ksp = forward(&x, &maps, &mask).unwrap();
        let (_, report) = reconstruct_l1wavelet(&ksp, &maps, 0.002, 40).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn huge_mu_kills_everything() {
        let dims = (16, 16, 16);
        let x = generate_phantom(3, dims, 6).unwrap();
        let maps = synth_coil_maps(dims, 2, 5).unwrap();
        let mask = SamplingMask::full((16, 16), 16);
        let ksp = forward(&x, &maps, &mask).unwrap();
        let (out, _) = reconstruct_l1wavelet(&ksp, &maps, 1e4, 10).unwrap();
        let norm = out.norm();
        assert!(norm < 1e-6, "norm {norm}");
    }

    #[test]
    fn non_divisible_dims_pad_internally() {
        let dims = (12, 20, 12); // not divisible by 8
        let x = generate_phantom(4, dims, 5).unwrap();
        let maps = synth_coil_maps(dims, 2, 6).unwrap();
        let mask = SamplingMask::full((20, 12), 12);
        let ksp = forward(&x, &maps, &mask).unwrap();
        let (out, _) = reconstruct_l1wavelet(&ksp, &maps, 0.001, 10).unwrap();
        assert_eq!(out.dims(), dims);
        assert!(out.data.iter().all(|z| z.re.is_finite()));
    }
}
