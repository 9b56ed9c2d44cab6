use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use volume_core::io::Cursor;
use volume_core::{axis_coords, ComplexVolume, Mesh2D, Mesh3D, C32};

use crate::{ReprError, Result};

/// Default Mahalanobis truncation radius; beyond it a Gaussian contributes
/// nothing and the omission is bounded by `|amp| * exp(-trunc^2 / 2)`.
pub const TRUNC_SIGMAS: f64 = 3.0;

/// Anisotropic complex Gaussian mixture over `[-1,1]^3`. The covariance of
/// Gaussian k is `R S S^T R^T` with `S = diag(exp(log_scale_k))` and `R` the
/// rotation of the (normalized) quaternion.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub mu: Vec<[f32; 3]>,
    pub log_scale: Vec<[f32; 3]>,
    /// (w, x, y, z), renormalized after every optimizer step.
    pub quat: Vec<[f32; 4]>,
    /// (a, b): real and imaginary amplitudes.
    pub amp: Vec<[f32; 2]>,
}

/// Parameter gradients, accumulated in f64.
#[derive(Debug, Clone)]
pub struct GaussianGrads {
    pub mu: Vec<[f64; 3]>,
    pub log_scale: Vec<[f64; 3]>,
    pub quat: Vec<[f64; 4]>,
    pub amp: Vec<[f64; 2]>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Renormalize all quaternions to unit length.
    pub fn normalize_quats(&mut self) {
        for q in self.quat.iter_mut() {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.0 {
                for v in q.iter_mut() {
                    *v /= n;
                }
            } else {
                *q = [1.0, 0.0, 0.0, 0.0];
            }
        }
    }
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            mu: vec![[0.0; 3]; n],
            log_scale: vec![[0.0; 3]; n],
            quat: vec![[0.0; 4]; n],
            amp: vec![[0.0; 2]; n],
        }
    }
}

fn rot_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
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

/// Derivatives of the rotation matrix w.r.t. the unit quaternion components.
fn rot_matrix_grads(q: [f64; 4]) -> [[[f64; 3]; 3]; 4] {
    let [w, x, y, z] = q;
    [
        [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]].map(|r| r.map(|v| 2.0 * v)),
        [[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]].map(|r| r.map(|v| 2.0 * v)),
        [[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]].map(|r| r.map(|v| 2.0 * v)),
        [[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]].map(|r| r.map(|v| 2.0 * v)),
    ]
}

struct Prepared {
    mu: [f64; 3],
    rot: [[f64; 3]; 3],
    inv_s: [f64; 3],
    amp: [f64; 2],
    /// Axis-aligned truncation half extents: trunc * sqrt(Sigma_jj).
    half: [f64; 3],
    q_hat: [f64; 4],
    q_norm: f64,
}

fn prepare(cloud: &GaussianCloud, trunc: f64) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(cloud.len());
    for k in 0..cloud.len() {
        let q = cloud.quat[k].map(|v| v as f64);
        let q_norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !q_norm.is_finite() || q_norm == 0.0 {
            return Err(ReprError::invalid(format!(
                "gaussian {k}: quaternion is degenerate"
            )));
        }
        let q_hat = q.map(|v| v / q_norm);
        let rot = rot_matrix(q_hat);
        let s = cloud.log_scale[k].map(|l| (l as f64).exp());
        if s.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(ReprError::invalid(format!(
                "gaussian {k}: non-finite covariance scales"
            )));
        }
        let mu = cloud.mu[k].map(|v| v as f64);
        let amp = cloud.amp[k].map(|v| v as f64);
        if mu.iter().any(|v| !v.is_finite()) || amp.iter().any(|v| !v.is_finite()) {
            return Err(ReprError::invalid(format!(
                "gaussian {k}: non-finite parameters"
            )));
        }
        // Sigma_jj = sum_k R_jk^2 s_k^2
        let mut half = [0.0f64; 3];
        for j in 0..3 {
            let var =
                rot[j][0] * rot[j][0] * s[0] * s[0] + rot[j][1] * rot[j][1] * s[1] * s[1]
                    + rot[j][2] * rot[j][2] * s[2] * s[2];
            half[j] = trunc * var.sqrt();
        }
        out.push(Prepared {
            mu,
            rot,
            inv_s: [1.0 / s[0], 1.0 / s[1], 1.0 / s[2]],
            amp,
            half,
            q_hat,
            q_norm,
        });
    }
    Ok(out)
}

/// Index range [lo, hi) of ascending `axis` values within [min, max].
fn axis_range(axis: &[f32], min: f64, max: f64) -> (usize, usize) {
    let lo = axis.partition_point(|&c| (c as f64) < min);
    let hi = axis.partition_point(|&c| (c as f64) <= max);
    (lo, hi)
}

const TILE: usize = 8;

struct TileGrid {
    axes: [Vec<f32>; 3],
    tiles: [usize; 3],
}

impl TileGrid {
    fn new(axes: [Vec<f32>; 3]) -> Self {
        let tiles = [
            axes[0].len().div_ceil(TILE),
            axes[1].len().div_ceil(TILE),
            axes[2].len().div_ceil(TILE),
        ];
        Self { axes, tiles }
    }

    fn n_tiles(&self) -> usize {
        self.tiles.iter().product()
    }

    fn tile_cell_ranges(&self, t: usize) -> [(usize, usize); 3] {
        let tz = t % self.tiles[2];
        let ty = (t / self.tiles[2]) % self.tiles[1];
        let tx = t / (self.tiles[2] * self.tiles[1]);
        let r = |ti: usize, n: usize| (ti * TILE, ((ti + 1) * TILE).min(n));
        [
            r(tx, self.axes[0].len()),
            r(ty, self.axes[1].len()),
            r(tz, self.axes[2].len()),
        ]
    }

    /// Bucket Gaussians into every tile their truncation box overlaps.
    fn bucket(&self, prepared: &[Prepared]) -> Vec<Vec<usize>> {
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); self.n_tiles()];
        for (k, p) in prepared.iter().enumerate() {
            let mut t_ranges = [(0usize, 0usize); 3];
            let mut empty = false;
            for j in 0..3 {
                let (lo, hi) = axis_range(&self.axes[j], p.mu[j] - p.half[j], p.mu[j] + p.half[j]);
                if lo >= hi {
                    empty = true;
                    break;
                }
                t_ranges[j] = (lo / TILE, (hi - 1) / TILE + 1);
            }
            if empty {
                continue;
            }
            for tx in t_ranges[0].0..t_ranges[0].1 {
                for ty in t_ranges[1].0..t_ranges[1].1 {
                    for tz in t_ranges[2].0..t_ranges[2].1 {
                        buckets[(tx * self.tiles[1] + ty) * self.tiles[2] + tz].push(k);
                    }
                }
            }
        }
        buckets
    }
}

/// Evaluate one point against one prepared Gaussian; returns the local
/// frame offset and squared Mahalanobis distance.
#[inline]
fn mahalanobis(p: &Prepared, x: [f64; 3]) -> ([f64; 3], [f64; 3], f64) {
    let w = [x[0] - p.mu[0], x[1] - p.mu[1], x[2] - p.mu[2]];
    let mut u = [0.0f64; 3];
    for j in 0..3 {
        u[j] = p.rot[0][j] * w[0] + p.rot[1][j] * w[1] + p.rot[2][j] * w[2];
    }
    let d2 = (u[0] * p.inv_s[0]).powi(2) + (u[1] * p.inv_s[1]).powi(2)
        + (u[2] * p.inv_s[2]).powi(2);
    (w, u, d2)
}

fn rasterize_core(
    cloud: &GaussianCloud,
    axes: [Vec<f32>; 3],
    trunc: f64,
) -> Result<Vec<C32>> {
    let prepared = prepare(cloud, trunc)?;
    let grid = TileGrid::new(axes);
    let buckets = grid.bucket(&prepared);
    let trunc_sq = trunc * trunc;
    let (ny, nz) = (grid.axes[1].len(), grid.axes[2].len());

    let tile_results: Vec<(usize, Vec<(usize, C32)>)> = (0..grid.n_tiles())
        .into_par_iter()
        .map(|t| {
            let ranges = grid.tile_cell_ranges(t);
            let mut vals = Vec::new();
            let bucket = &buckets[t];
            if bucket.is_empty() {
                return (t, vals);
            }
            for ix in ranges[0].0..ranges[0].1 {
                for iy in ranges[1].0..ranges[1].1 {
                    for iz in ranges[2].0..ranges[2].1 {
                        let x = [
                            grid.axes[0][ix] as f64,
                            grid.axes[1][iy] as f64,
                            grid.axes[2][iz] as f64,
                        ];
                        let mut acc_re = 0.0f64;
                        let mut acc_im = 0.0f64;
                        for &k in bucket {
                            let p = &prepared[k];
                            let (_, _, d2) = mahalanobis(p, x);
                            if d2 <= trunc_sq {
                                let e = (-0.5 * d2).exp();
                                acc_re += p.amp[0] * e;
                                acc_im += p.amp[1] * e;
                            }
                        }
                        if acc_re != 0.0 || acc_im != 0.0 {
                            vals.push(((ix * ny + iy) * nz + iz, C32::new(acc_re as f32, acc_im as f32)));
                        }
                    }
                }
            }
            (t, vals)
        })
        .collect();

    let n_total = grid.axes[0].len() * ny * nz;
    let mut out = vec![C32::new(0.0, 0.0); n_total];
    for (_, vals) in tile_results {
        for (idx, v) in vals {
            out[idx] = v;
        }
    }
    Ok(out)
}

struct GradAccum {
    amp: [f64; 2],
    mu: [f64; 3],
    log_scale: [f64; 3],
    rot: [[f64; 3]; 3],
}

impl GradAccum {
    fn zero() -> Self {
        Self {
            amp: [0.0; 2],
            mu: [0.0; 3],
            log_scale: [0.0; 3],
            rot: [[0.0; 3]; 3],
        }
    }
}

fn rasterize_backward_core(
    cloud: &GaussianCloud,
    axes: [Vec<f32>; 3],
    trunc: f64,
    upstream: &[C32],
    grads: &mut GaussianGrads,
) -> Result<()> {
    let prepared = prepare(cloud, trunc)?;
    let grid = TileGrid::new(axes);
    let buckets = grid.bucket(&prepared);
    let trunc_sq = trunc * trunc;
    let (ny, nz) = (grid.axes[1].len(), grid.axes[2].len());

    let tile_grads: Vec<Vec<(usize, GradAccum)>> = (0..grid.n_tiles())
        .into_par_iter()
        .map(|t| {
            let ranges = grid.tile_cell_ranges(t);
            let bucket = &buckets[t];
            let mut local: Vec<(usize, GradAccum)> =
                bucket.iter().map(|&k| (k, GradAccum::zero())).collect();
            for ix in ranges[0].0..ranges[0].1 {
                for iy in ranges[1].0..ranges[1].1 {
                    for iz in ranges[2].0..ranges[2].1 {
                        let g = upstream[(ix * ny + iy) * nz + iz];
                        if g.re == 0.0 && g.im == 0.0 {
                            continue;
                        }
                        let (g_re, g_im) = (g.re as f64, g.im as f64);
                        let x = [
                            grid.axes[0][ix] as f64,
                            grid.axes[1][iy] as f64,
                            grid.axes[2][iz] as f64,
                        ];
                        for (bi, &k) in bucket.iter().enumerate() {
                            let p = &prepared[k];
                            let (w, u, d2) = mahalanobis(p, x);
                            if d2 > trunc_sq {
                                continue;
                            }
                            let e = (-0.5 * d2).exp();
                            let acc = &mut local[bi].1;
                            acc.amp[0] += g_re * e;
                            acc.amp[1] += g_im * e;
                            let de = g_re * p.amp[0] + g_im * p.amp[1];
                            let dd2 = -0.5 * e * de;
                            // p_j = 2 u_j / s_j^2
                            let pj = [
                                2.0 * u[0] * p.inv_s[0] * p.inv_s[0],
                                2.0 * u[1] * p.inv_s[1] * p.inv_s[1],
                                2.0 * u[2] * p.inv_s[2] * p.inv_s[2],
                            ];
                            for m in 0..3 {
                                let dmu = -(p.rot[m][0] * pj[0]
                                    + p.rot[m][1] * pj[1]
                                    + p.rot[m][2] * pj[2]);
                                acc.mu[m] += dd2 * dmu;
                            }
                            for j in 0..3 {
                                let uj_sj = u[j] * p.inv_s[j];
                                acc.log_scale[j] += dd2 * (-2.0 * uj_sj * uj_sj);
                            }
                            for m in 0..3 {
                                for n in 0..3 {
                                    acc.rot[m][n] += dd2 * w[m] * pj[n];
                                }
                            }
                        }
                    }
                }
            }
            local
        })
        .collect();

    // deterministic reduction in tile order, then the quaternion chain
    let n = cloud.len();
    let mut rot_grads: Vec<[[f64; 3]; 3]> = vec![[[0.0; 3]; 3]; n];
    for tile in tile_grads {
        for (k, acc) in tile {
            grads.amp[k][0] += acc.amp[0];
            grads.amp[k][1] += acc.amp[1];
            for j in 0..3 {
                grads.mu[k][j] += acc.mu[j];
                grads.log_scale[k][j] += acc.log_scale[j];
            }
            for m in 0..3 {
                for nn in 0..3 {
                    rot_grads[k][m][nn] += acc.rot[m][nn];
                }
            }
        }
    }
    for k in 0..n {
        let p = &prepared[k];
        let dr_dq = rot_matrix_grads(p.q_hat);
        let mut dq_hat = [0.0f64; 4];
        for (qi, dr) in dr_dq.iter().enumerate() {
            let mut acc = 0.0;
            for m in 0..3 {
                for nn in 0..3 {
                    acc += rot_grads[k][m][nn] * dr[m][nn];
                }
            }
            dq_hat[qi] = acc;
        }
        // through the normalization: dq = (I - q_hat q_hat^T) dq_hat / |q|
        let dot = dq_hat[0] * p.q_hat[0]
            + dq_hat[1] * p.q_hat[1]
            + dq_hat[2] * p.q_hat[2]
            + dq_hat[3] * p.q_hat[3];
        for qi in 0..4 {
            grads.quat[k][qi] += (dq_hat[qi] - dot * p.q_hat[qi]) / p.q_norm;
        }
    }
    Ok(())
}

fn mesh3_axes(mesh: &Mesh3D) -> [Vec<f32>; 3] {
    [mesh.xs.clone(), mesh.ys.clone(), mesh.zs.clone()]
}

fn mesh2_axes(mesh: &Mesh2D) -> [Vec<f32>; 3] {
    let mut axes = [
        vec![mesh.position],
        vec![mesh.position],
        vec![mesh.position],
    ];
    let (a, b) = mesh.plane.in_plane_axes();
    axes[a] = mesh.xs.clone();
    axes[b] = mesh.ys.clone();
    axes[mesh.plane.fixed_axis()] = vec![mesh.position];
    axes
}

impl GaussianCloud {
    /// Rasterize onto a 3D mesh with tile bucketing.
    pub fn rasterize_mesh3(&self, mesh: &Mesh3D, trunc: f64) -> Result<Array3<C32>> {
        let vals = rasterize_core(self, mesh3_axes(mesh), trunc)?;
        Ok(Array3::from_shape_vec(mesh.dims(), vals).expect("shape matches"))
    }

    /// Rasterize onto a 2D mesh view.
    pub fn rasterize_mesh2(&self, mesh: &Mesh2D, trunc: f64) -> Result<Array2<C32>> {
        let axes = mesh2_axes(mesh);
        let vals = rasterize_core(self, axes, trunc)?;
        // the fixed axis is a singleton, so the flat order already matches
        Ok(Array2::from_shape_vec(mesh.dims(), vals).expect("shape matches"))
    }

    pub fn rasterize_backward_mesh3(
        &self,
        mesh: &Mesh3D,
        trunc: f64,
        upstream: &Array3<C32>,
        grads: &mut GaussianGrads,
    ) -> Result<()> {
        let flat: Vec<C32> = upstream.iter().cloned().collect();
        rasterize_backward_core(self, mesh3_axes(mesh), trunc, &flat, grads)
    }

    pub fn rasterize_backward_mesh2(
        &self,
        mesh: &Mesh2D,
        trunc: f64,
        upstream: &Array2<C32>,
        grads: &mut GaussianGrads,
    ) -> Result<()> {
        let flat: Vec<C32> = upstream.iter().cloned().collect();
        rasterize_backward_core(self, mesh2_axes(mesh), trunc, &flat, grads)
    }
}

/// All-pairs untruncated evaluation at arbitrary points; the oracle the
/// tiled rasterizer is checked against.
pub fn rasterize_points_bruteforce(cloud: &GaussianCloud, pts: &[[f32; 3]]) -> Vec<C32> {
    rasterize_points_bruteforce64(cloud, pts)
        .into_iter()
        .map(|z| C32::new(z.re as f32, z.im as f32))
        .collect()
}

/// f64 variant of the brute-force oracle, for finite-difference checks.
pub fn rasterize_points_bruteforce64(
    cloud: &GaussianCloud,
    pts: &[[f32; 3]],
) -> Vec<num_complex::Complex64> {
    let prepared = prepare(cloud, 1.0).expect("valid cloud");
    pts.iter()
        .map(|&pt| {
            let x = pt.map(|v| v as f64);
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for p in &prepared {
                let (_, _, d2) = mahalanobis(p, x);
                let e = (-0.5 * d2).exp();
                re += p.amp[0] * e;
                im += p.amp[1] * e;
            }
            num_complex::Complex64::new(re, im)
        })
        .collect()
}

/// Seed a cloud from a coarse volume: centers drawn with probability
/// proportional to voxel magnitude, per-voxel complex amplitudes, isotropic
/// one-voxel scales, identity rotations, then one global complex
/// least-squares amplitude calibration against the volume.
pub fn init_gaussians_from_volume(
    vol: &ComplexVolume,
    count: usize,
    seed: u64,
) -> Result<GaussianCloud> {
    if count == 0 {
        return Err(ReprError::invalid("need at least one gaussian"));
    }
    let total_mag: f64 = vol.data.iter().map(|z| z.norm() as f64).sum();
    if !(total_mag > 0.0) {
        return Err(ReprError::DegenerateInput(
            "cannot seed gaussians from an all-zero volume".into(),
        ));
    }
    let dims = vol.dims();
    let xs = axis_coords(dims.0);
    let ys = axis_coords(dims.1);
    let zs = axis_coords(dims.2);

    let mut cdf = Vec::with_capacity(vol.data.len());
    let mut acc = 0.0f64;
    for z in vol.data.iter() {
        acc += z.norm() as f64;
        cdf.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ls = [
        (2.0 / dims.0 as f32).ln(),
        (2.0 / dims.1 as f32).ln(),
        (2.0 / dims.2 as f32).ln(),
    ];
    let mut cloud = GaussianCloud {
        mu: Vec::with_capacity(count),
        log_scale: vec![ls; count],
        quat: vec![[1.0, 0.0, 0.0, 0.0]; count],
        amp: Vec::with_capacity(count),
    };
    let (_, ny, nz) = dims;
    for _ in 0..count {
        let u: f64 = rng.gen_range(0.0..acc);
        let idx = cdf.partition_point(|&c| c <= u).min(vol.data.len() - 1);
        let iz = idx % nz;
        let iy = (idx / nz) % ny;
        let ix = idx / (nz * ny);
        cloud.mu.push([xs[ix], ys[iy], zs[iz]]);
        let z = vol.data.as_slice().expect("standard layout")[idx];
        cloud.amp.push([z.re, z.im]);
    }

    // global least-squares complex scale so the rasterized magnitude
    // roughly matches the source
    let mesh = volume_core::make_mesh3(dims).map_err(ReprError::Volume)?;
    let r = cloud.rasterize_mesh3(&mesh, TRUNC_SIGMAS)?;
    let mut num = num_complex::Complex64::new(0.0, 0.0);
    let mut den = 0.0f64;
    for (rv, tv) in r.iter().zip(vol.data.iter()) {
        let rc = num_complex::Complex64::new(rv.re as f64, rv.im as f64);
        let tc = num_complex::Complex64::new(tv.re as f64, tv.im as f64);
        num += rc.conj() * tc;
        den += rc.norm_sqr();
    }
    if den > 0.0 {
        let c = num / den;
        for ab in cloud.amp.iter_mut() {
            let z = num_complex::Complex64::new(ab[0] as f64, ab[1] as f64) * c;
            *ab = [z.re as f32, z.im as f32];
        }
    }
    Ok(cloud)
}

pub const CGSP_MAGIC: &[u8; 6] = b"CGSP1\0";

pub fn write_gaussians(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CGSP_MAGIC)?;
    w.write_u32::<LittleEndian>(cloud.len() as u32)?;
    for k in 0..cloud.len() {
        for v in cloud.mu[k] {
            w.write_f32::<LittleEndian>(v)?;
        }
        for v in cloud.log_scale[k] {
            w.write_f32::<LittleEndian>(v)?;
        }
        for v in cloud.quat[k] {
            w.write_f32::<LittleEndian>(v)?;
        }
        for v in cloud.amp[k] {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_gaussians(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let buf = std::fs::read(path)?;
    let mut cur = Cursor::new(&buf);
    cur.expect_magic(CGSP_MAGIC, "CGSP1")
        .map_err(ReprError::Volume)?;
    let n = cur.read_u32("gaussian count").map_err(ReprError::Volume)? as usize;
    let mut cloud = GaussianCloud {
        mu: Vec::with_capacity(n),
        log_scale: Vec::with_capacity(n),
        quat: Vec::with_capacity(n),
        amp: Vec::with_capacity(n),
    };
    let mut f = |what| cur.read_f32(what).map_err(ReprError::Volume);
    for _ in 0..n {
        cloud.mu.push([f("mu")?, f("mu")?, f("mu")?]);
        cloud.log_scale.push([f("ls")?, f("ls")?, f("ls")?]);
        cloud.quat.push([f("q")?, f("q")?, f("q")?, f("q")?]);
        cloud.amp.push([f("amp")?, f("amp")?]);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use volume_core::{generate_phantom, make_mesh3, Plane};

    fn single_gaussian() -> GaussianCloud {
        GaussianCloud {
            mu: vec![[0.0, 0.0, 0.0]],
            log_scale: vec![[(0.25f32).ln(), (0.25f32).ln(), (0.25f32).ln()]],
            quat: vec![[1.0, 0.0, 0.0, 0.0]],
            amp: vec![[1.0, 0.0]],
        }
    }

    fn random_cloud(seed: u64, n: usize) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = GaussianCloud {
            mu: Vec::new(),
            log_scale: Vec::new(),
            quat: Vec::new(),
            amp: Vec::new(),
        };
        for _ in 0..n {
            cloud.mu.push([
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ]);
            cloud.log_scale.push([
                rng.gen_range(-2.5..-0.8),
                rng.gen_range(-2.5..-0.8),
                rng.gen_range(-2.5..-0.8),
            ]);
            let q = [
                rng.gen_range(-1.0..1.0f32),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            cloud.quat.push(q);
            cloud
                .amp
                .push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
        cloud.normalize_quats();
        cloud
    }

    #[test]
    fn unit_amplitude_at_center() {
        let cloud = single_gaussian();
        let vals = rasterize_points_bruteforce(&cloud, &[[0.0, 0.0, 0.0]]);
        assert!((vals[0].re - 1.0).abs() < 1e-6 && vals[0].im.abs() < 1e-6);
    }

    #[test]
    fn one_sigma_point_attenuates_correctly() {
        let cloud = single_gaussian();
        // one standard deviation along the first principal axis
        let vals = rasterize_points_bruteforce(&cloud, &[[0.25, 0.0, 0.0]]);
        let expect = (-0.5f32).exp();
        assert!((vals[0].re - expect).abs() < 1e-5, "{}", vals[0].re);
    }

    #[test]
    fn tiled_matches_bruteforce_within_truncation_bound() {
        let cloud = random_cloud(0, 500);
        let mesh = make_mesh3((24, 20, 16)).unwrap();
        let tiled = cloud.rasterize_mesh3(&mesh, TRUNC_SIGMAS).unwrap();
        let pts = crate::inn::mesh3_points(&mesh);
        let brute = rasterize_points_bruteforce(&cloud, &pts);
        let bound: f64 = cloud
            .amp
            .iter()
            .map(|ab| ((ab[0] * ab[0] + ab[1] * ab[1]) as f64).sqrt())
            .sum::<f64>()
            * (-0.5 * TRUNC_SIGMAS * TRUNC_SIGMAS).exp();
        for (t, b) in tiled.iter().zip(brute.iter()) {
            let err = (t - b).norm() as f64;
            assert!(err <= bound + 1e-6, "err {err} vs bound {bound}");
        }
    }

    #[test]
    fn mesh2_matches_mesh3_plane_restriction() {
        let cloud = random_cloud(3, 40);
        let mesh3 = make_mesh3((10, 12, 14)).unwrap();
        let full = cloud.rasterize_mesh3(&mesh3, 4.0).unwrap();
        for plane in Plane::ALL {
            let m2 = mesh3.plane_restriction(plane, 5);
            let sliced = cloud.rasterize_mesh2(&m2, 4.0).unwrap();
            let direct = full.index_axis(ndarray::Axis(plane.fixed_axis()), 5);
            for (a, b) in sliced.iter().zip(direct.iter()) {
                assert!((a - b).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        // wide truncation so the test never straddles the cutoff
        let trunc = 8.0f64;
        let cloud = random_cloud(7, 6);
        let mesh = make_mesh3((6, 5, 7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let upstream = Array3::from_shape_simple_fn(mesh.dims(), || {
            C32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        // untruncated f64 oracle keeps the finite differences clean; at
        // trunc = 8 the truncated and untruncated sums agree to ~1e-14
        let pts = crate::inn::mesh3_points(&mesh);
        let loss = |c: &GaussianCloud| -> f64 {
            rasterize_points_bruteforce64(c, &pts)
                .iter()
                .zip(upstream.iter())
                .map(|(a, g)| a.re * g.re as f64 + a.im * g.im as f64)
                .sum()
        };
        let mut grads = GaussianGrads::zeros(cloud.len());
        cloud
            .rasterize_backward_mesh3(&mesh, trunc, &upstream, &mut grads)
            .unwrap();
        let eps = 1e-4f32;
        let mut check = |get: &dyn Fn(&GaussianCloud) -> f32,
                         set: &dyn Fn(&mut GaussianCloud, f32),
                         analytic: f64,
                         label: &str| {
            let mut cp = cloud.clone();
            let orig = get(&cp);
            set(&mut cp, orig + eps);
            let hi = get(&cp) as f64;
            let lp = loss(&cp);
            set(&mut cp, orig - eps);
            let lo = get(&cp) as f64;
            let lm = loss(&cp);
            // use the realized f32 step as the denominator
            let fd = (lp - lm) / (hi - lo);
            let scale = analytic.abs().max(fd.abs()).max(1e-3);
            assert!(
                (fd - analytic).abs() / scale < 1e-4 || (fd - analytic).abs() < 1e-6,
                "{label}: fd {fd} vs analytic {analytic}"
            );
        };
        for k in 0..cloud.len() {
            for j in 0..3 {
                check(
                    &|c| c.mu[k][j],
                    &|c, v| c.mu[k][j] = v,
                    grads.mu[k][j],
                    &format!("mu[{k}][{j}]"),
                );
                check(
                    &|c| c.log_scale[k][j],
                    &|c, v| c.log_scale[k][j] = v,
                    grads.log_scale[k][j],
                    &format!("ls[{k}][{j}]"),
                );
            }
            for j in 0..4 {
                check(
                    &|c| c.quat[k][j],
                    &|c, v| c.quat[k][j] = v,
                    grads.quat[k][j],
                    &format!("q[{k}][{j}]"),
                );
            }
            for j in 0..2 {
                check(
                    &|c| c.amp[k][j],
                    &|c, v| c.amp[k][j] = v,
                    grads.amp[k][j],
                    &format!("amp[{k}][{j}]"),
                );
            }
        }
    }

    #[test]
    fn rotation_invariance_at_90_degrees() {
        // rotate cloud and evaluation points by 90 degrees about z
        let cloud = random_cloud(5, 20);
        let mut rotated = cloud.clone();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let qr = [h, 0.0, 0.0, h]; // 90 deg about z
        for k in 0..rotated.len() {
            let [mx, my, mz] = rotated.mu[k];
            rotated.mu[k] = [-my, mx, mz];
            let q = rotated.quat[k];
            // hamilton product qr * q
            rotated.quat[k] = [
                qr[0] * q[0] - qr[3] * q[3],
                qr[0] * q[1] - qr[3] * q[2],
                qr[0] * q[2] + qr[3] * q[1],
                qr[0] * q[3] + qr[3] * q[0],
            ];
        }
        let pts: Vec<[f32; 3]> = vec![[0.3, 0.1, -0.2], [-0.5, 0.4, 0.6], [0.0, -0.7, 0.1]];
        let rotated_pts: Vec<[f32; 3]> = pts.iter().map(|p| [-p[1], p[0], p[2]]).collect();
        let base = rasterize_points_bruteforce(&cloud, &pts);
        let rot = rasterize_points_bruteforce(&rotated, &rotated_pts);
        for (a, b) in base.iter().zip(rot.iter()) {
            assert!((a - b).norm() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn init_from_volume_follows_magnitude() {
        let vol = generate_phantom(2, (16, 16, 16), 6).unwrap();
        let cloud = init_gaussians_from_volume(&vol, 4000, 0).unwrap();
        assert_eq!(cloud.len(), 4000);
        // centers should concentrate where |vol| is large: compare mean
        // magnitude at chosen voxels against the volume mean
        let xs = axis_coords(16);
        let mut at_centers = 0.0f64;
        for mu in &cloud.mu {
            let idx = |v: f32| {
                xs.iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - v).abs().partial_cmp(&(b.1 - v).abs()).unwrap())
                    .unwrap()
                    .0
            };
            at_centers += vol.data[[idx(mu[0]), idx(mu[1]), idx(mu[2])]].norm() as f64;
        }
        at_centers /= cloud.len() as f64;
        let overall: f64 =
            vol.data.iter().map(|z| z.norm() as f64).sum::<f64>() / vol.data.len() as f64;
        assert!(at_centers > 2.0 * overall, "{at_centers} vs {overall}");
        // determinism
        let again = init_gaussians_from_volume(&vol, 4000, 0).unwrap();
        assert_eq!(cloud, again);
    }

    #[test]
    fn zero_volume_rejected() {
        let vol = ComplexVolume::zeros((8, 8, 8), [1.0; 3]).unwrap();
        assert!(matches!(
            init_gaussians_from_volume(&vol, 10, 0),
            Err(ReprError::DegenerateInput(_))
        ));
    }

    #[test]
    fn gaussian_file_round_trip() {
        let cloud = random_cloud(9, 37);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gauss.bin");
        write_gaussians(&cloud, &path).unwrap();
        let back = read_gaussians(&path).unwrap();
        assert_eq!(cloud, back);
    }

    #[test]
    fn invalid_cloud_names_the_gaussian() {
        let mut cloud = random_cloud(1, 3);
        cloud.log_scale[1][0] = f32::NAN;
        let mesh = make_mesh3((4, 4, 4)).unwrap();
        match cloud.rasterize_mesh3(&mesh, 3.0) {
            Err(ReprError::InvalidArgument(msg)) => assert!(msg.contains("gaussian 1"), "{msg}"),
            other => panic!("expected invalid argument, got {other:?}"),
        }
    }
}
