use ndarray::{Array2, Array3};

use representations::{
    init_gaussians_from_volume, resample_grid_mesh2, resample_grid_mesh3, scatter_grid_mesh2,
    scatter_grid_mesh3, GaussianCloud, GaussianGrads, GridRepr, Inn, InnConfig, InterpMode,
    TRUNC_SIGMAS,
};
use volume_core::{ComplexVolume, Mesh2D, Mesh3D, C32};

use crate::{ReconError, Result};

/// A parameterization of the reconstructed volume that can be evaluated on
/// meshes and updated from mesh-space gradients. Backward calls recompute
/// whatever they need, so no state is carried between eval and accumulate.
pub trait ReprBackend {
    fn name(&self) -> &'static str;
    fn eval_volume(&self, mesh: &Mesh3D) -> Result<Array3<C32>>;
    fn eval_slice(&self, mesh: &Mesh2D) -> Result<Array2<C32>>;
    fn zero_grad(&mut self);
    fn accum_grad_volume(&mut self, mesh: &Mesh3D, upstream: &Array3<C32>) -> Result<()>;
    fn accum_grad_slice(&mut self, mesh: &Mesh2D, upstream: &Array2<C32>) -> Result<()>;
    /// One adaptive-moment update from the accumulated gradients.
    fn step(&mut self, lr: f32);
}

/// Adam on a complex array, real and imaginary parts treated as
/// independent real coordinates.
struct ComplexAdam {
    m: Array3<C32>,
    v: Array3<C32>,
    t: u64,
}

impl ComplexAdam {
    fn new(dims: (usize, usize, usize)) -> Self {
        Self {
            m: Array3::zeros(dims),
            v: Array3::zeros(dims),
            t: 0,
        }
    }

    fn step(&mut self, w: &mut Array3<C32>, g: &Array3<C32>, lr: f32) {
        self.t += 1;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        ndarray::Zip::from(w)
            .and(g)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|w, &g, m, v| {
                m.re = b1 * m.re + (1.0 - b1) * g.re;
                m.im = b1 * m.im + (1.0 - b1) * g.im;
                v.re = b2 * v.re + (1.0 - b2) * g.re * g.re;
                v.im = b2 * v.im + (1.0 - b2) * g.im * g.im;
                w.re -= lr * (m.re / bc1) / ((v.re / bc2).sqrt() + eps);
                w.im -= lr * (m.im / bc1) / ((v.im / bc2).sqrt() + eps);
            });
    }
}

/// Direct voxel-grid parameters on the acquisition grid.
pub struct VoxelBackend {
    pub grid: Array3<C32>,
    grad: Array3<C32>,
    adam: ComplexAdam,
}

impl VoxelBackend {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            grid: Array3::zeros(dims),
            grad: Array3::zeros(dims),
            adam: ComplexAdam::new(dims),
        }
    }

    pub fn grad_mut(&mut self) -> &mut Array3<C32> {
        &mut self.grad
    }
}

impl ReprBackend for VoxelBackend {
    fn name(&self) -> &'static str {
        "voxel"
    }

    fn eval_volume(&self, mesh: &Mesh3D) -> Result<Array3<C32>> {
        if mesh.dims() != self.grid.dim() {
            return Err(ReconError::invalid(
                "voxel backend requires the acquisition mesh",
            ));
        }
        Ok(self.grid.clone())
    }

    fn eval_slice(&self, mesh: &Mesh2D) -> Result<Array2<C32>> {
        let repr = GridRepr::new(self.grid.clone(), InterpMode::Trilinear);
        resample_grid_mesh2(&repr, mesh).map_err(Into::into)
    }

    fn zero_grad(&mut self) {
        self.grad.fill(C32::new(0.0, 0.0));
    }

    fn accum_grad_volume(&mut self, _mesh: &Mesh3D, upstream: &Array3<C32>) -> Result<()> {
        self.grad += upstream;
        Ok(())
    }

    fn accum_grad_slice(&mut self, mesh: &Mesh2D, upstream: &Array2<C32>) -> Result<()> {
        let s = scatter_grid_mesh2(self.grid.dim(), InterpMode::Trilinear, mesh, upstream);
        self.grad += &s;
        Ok(())
    }

    fn step(&mut self, lr: f32) {
        let Self { grid, grad, adam } = self;
        adam.step(grid, grad, lr);
    }
}

/// High-resolution grid evaluated off-grid by interpolation (Approach 2.1).
pub struct GridBackend {
    pub repr: GridRepr,
    grad: Array3<C32>,
    adam: ComplexAdam,
}

impl GridBackend {
    pub fn zeros(dims: (usize, usize, usize), mode: InterpMode) -> Self {
        Self {
            repr: GridRepr::new(Array3::zeros(dims), mode),
            grad: Array3::zeros(dims),
            adam: ComplexAdam::new(dims),
        }
    }
}

impl ReprBackend for GridBackend {
    fn name(&self) -> &'static str {
        "grid_resample"
    }

    fn eval_volume(&self, mesh: &Mesh3D) -> Result<Array3<C32>> {
        resample_grid_mesh3(&self.repr, mesh).map_err(Into::into)
    }

    fn eval_slice(&self, mesh: &Mesh2D) -> Result<Array2<C32>> {
        resample_grid_mesh2(&self.repr, mesh).map_err(Into::into)
    }

    fn zero_grad(&mut self) {
        self.grad.fill(C32::new(0.0, 0.0));
    }

    fn accum_grad_volume(&mut self, mesh: &Mesh3D, upstream: &Array3<C32>) -> Result<()> {
        let s = scatter_grid_mesh3(self.repr.dims(), self.repr.mode, mesh, upstream);
        self.grad += &s;
        Ok(())
    }

    fn accum_grad_slice(&mut self, mesh: &Mesh2D, upstream: &Array2<C32>) -> Result<()> {
        let s = scatter_grid_mesh2(self.repr.dims(), self.repr.mode, mesh, upstream);
        self.grad += &s;
        Ok(())
    }

    fn step(&mut self, lr: f32) {
        let Self { repr, grad, adam } = self;
        adam.step(&mut repr.grid, grad, lr);
    }
}

/// Implicit neural representation backend (Approach 2.2).
pub struct InnBackend {
    pub inn: Inn,
}

impl InnBackend {
    pub fn new(config: InnConfig) -> Self {
        Self {
            inn: Inn::new(config),
        }
    }
}

impl ReprBackend for InnBackend {
    fn name(&self) -> &'static str {
        "inn"
    }

    fn eval_volume(&self, mesh: &Mesh3D) -> Result<Array3<C32>> {
        self.inn.eval_mesh3(mesh).map_err(Into::into)
    }

    fn eval_slice(&self, mesh: &Mesh2D) -> Result<Array2<C32>> {
        self.inn.eval_mesh2(mesh).map_err(Into::into)
    }

    fn zero_grad(&mut self) {
        self.inn.zero_grad();
    }

    fn accum_grad_volume(&mut self, mesh: &Mesh3D, upstream: &Array3<C32>) -> Result<()> {
        let pts = representations::mesh3_points(mesh);
        let up: Vec<C32> = upstream.iter().cloned().collect();
        self.inn.accum_grad_points(&pts, &up);
        Ok(())
    }

    fn accum_grad_slice(&mut self, mesh: &Mesh2D, upstream: &Array2<C32>) -> Result<()> {
        let pts = representations::mesh2_points(mesh);
        let up: Vec<C32> = upstream.iter().cloned().collect();
        self.inn.accum_grad_points(&pts, &up);
        Ok(())
    }

    fn step(&mut self, lr: f32) {
        self.inn.adam_step(lr);
    }
}

/// Complex Gaussian-splatting backend (Approach 2.3).
pub struct GaussianBackend {
    pub cloud: GaussianCloud,
    grads: GaussianGrads,
    m: GaussianGrads,
    v: GaussianGrads,
    t: u64,
    pub trunc: f64,
}

impl GaussianBackend {
    pub fn new(cloud: GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            cloud,
            grads: GaussianGrads::zeros(n),
            m: GaussianGrads::zeros(n),
            v: GaussianGrads::zeros(n),
            t: 0,
            trunc: TRUNC_SIGMAS,
        }
    }

    /// Seed from a coarse reconstruction (the measurement pseudoinverse).
    pub fn from_volume(vol: &ComplexVolume, count: usize, seed: u64) -> Result<Self> {
        Ok(Self::new(init_gaussians_from_volume(vol, count, seed)?))
    }
}

fn adam_slice(w: &mut [f32], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= (lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps)) as f32;
    }
}

impl ReprBackend for GaussianBackend {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn eval_volume(&self, mesh: &Mesh3D) -> Result<Array3<C32>> {
        self.cloud.rasterize_mesh3(mesh, self.trunc).map_err(Into::into)
    }

    fn eval_slice(&self, mesh: &Mesh2D) -> Result<Array2<C32>> {
        self.cloud.rasterize_mesh2(mesh, self.trunc).map_err(Into::into)
    }

    fn zero_grad(&mut self) {
        self.grads = GaussianGrads::zeros(self.cloud.len());
    }

    fn accum_grad_volume(&mut self, mesh: &Mesh3D, upstream: &Array3<C32>) -> Result<()> {
        self.cloud
            .rasterize_backward_mesh3(mesh, self.trunc, upstream, &mut self.grads)
            .map_err(Into::into)
    }

    fn accum_grad_slice(&mut self, mesh: &Mesh2D, upstream: &Array2<C32>) -> Result<()> {
        self.cloud
            .rasterize_backward_mesh2(mesh, self.trunc, upstream, &mut self.grads)
            .map_err(Into::into)
    }

    fn step(&mut self, lr: f32) {
        self.t += 1;
        let lr = lr as f64;
        let n = self.cloud.len();
        for k in 0..n {
            adam_slice(
                &mut self.cloud.mu[k],
                &self.grads.mu[k],
                &mut self.m.mu[k],
                &mut self.v.mu[k],
                self.t,
                lr,
            );
            adam_slice(
                &mut self.cloud.log_scale[k],
                &self.grads.log_scale[k],
                &mut self.m.log_scale[k],
                &mut self.v.log_scale[k],
                self.t,
                lr,
            );
            adam_slice(
                &mut self.cloud.quat[k],
                &self.grads.quat[k],
                &mut self.m.quat[k],
                &mut self.v.quat[k],
                self.t,
                lr,
            );
            adam_slice(
                &mut self.cloud.amp[k],
                &self.grads.amp[k],
                &mut self.m.amp[k],
                &mut self.v.amp[k],
                self.t,
                lr,
            );
        }
        self.cloud.normalize_quats();
    }
}
