use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volume_core::{Mesh2D, Mesh3D, C32};

use crate::{ReprError, Result};

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone)]
pub struct InnConfig {
    /// Number of random Fourier frequency rows.
    pub n_features: usize,
    /// Standard deviation of the frequency matrix entries.
    pub scale: f32,
    pub width: usize,
    /// Number of hidden (linear + norm + relu) layers.
    pub depth: usize,
    pub seed: u64,
}

impl Default for InnConfig {
    fn default() -> Self {
        Self {
            n_features: 64,
            scale: 10.0,
            width: 128,
            depth: 3,
            seed: 0,
        }
    }
}

struct PTensor {
    w: Array2<f32>,
    g: Array2<f32>,
    m: Array2<f32>,
    v: Array2<f32>,
}

impl PTensor {
    fn new(w: Array2<f32>) -> Self {
        let z = Array2::zeros(w.raw_dim());
        Self {
            g: z.clone(),
            m: z.clone(),
            v: z,
            w,
        }
    }
}

struct HiddenLayer {
    w: PTensor,      // [out, in]
    b: PTensor,      // [1, out]
    ln_gain: PTensor, // [1, out]
    ln_bias: PTensor, // [1, out]
}

/// Coordinate network: random Fourier feature encoding followed by
/// normalized linear layers with ReLU, two output channels (re, im).
/// The frequency matrix is fixed at initialization and never trained.
pub struct Inn {
    pub config: InnConfig,
    pub fourier_b: Array2<f32>, // [F, 3]
    hidden: Vec<HiddenLayer>,
    final_w: PTensor, // [2, width]
    final_b: PTensor, // [1, 2]
    adam_t: u64,
}

fn normal(rng: &mut impl Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
    let u2: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

impl Inn {
    pub fn new(config: InnConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fourier_b =
            Array2::from_shape_simple_fn((config.n_features, 3), || normal(&mut rng) * config.scale);
        let mut hidden = Vec::new();
        let mut in_dim = 2 * config.n_features;
        for _ in 0..config.depth {
            let bound = (1.0 / in_dim as f32).sqrt();
            let w = Array2::from_shape_simple_fn((config.width, in_dim), || {
                rng.gen_range(-bound..bound)
            });
            hidden.push(HiddenLayer {
                w: PTensor::new(w),
                b: PTensor::new(Array2::zeros((1, config.width))),
                ln_gain: PTensor::new(Array2::ones((1, config.width))),
                ln_bias: PTensor::new(Array2::zeros((1, config.width))),
            });
            in_dim = config.width;
        }
        let bound = (1.0 / in_dim as f32).sqrt();
        let final_w =
            Array2::from_shape_simple_fn((2, in_dim), || rng.gen_range(-bound..bound) * 0.1);
        Self {
            config,
            fourier_b,
            hidden,
            final_w: PTensor::new(final_w),
            final_b: PTensor::new(Array2::zeros((1, 2))),
            adam_t: 0,
        }
    }

    fn params_mut(&mut self) -> Vec<&mut PTensor> {
        let mut p = Vec::new();
        for l in &mut self.hidden {
            p.push(&mut l.w);
            p.push(&mut l.b);
            p.push(&mut l.ln_gain);
            p.push(&mut l.ln_bias);
        }
        p.push(&mut self.final_w);
        p.push(&mut self.final_b);
        p
    }

    pub fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.w.len()).sum()
    }

    /// Fourier feature embedding [P, 2F].
    fn gamma(&self, pts: &[[f32; 3]]) -> Array2<f32> {
        let f = self.config.n_features;
        let mut out = Array2::<f32>::zeros((pts.len(), 2 * f));
        for (pi, p) in pts.iter().enumerate() {
            for fi in 0..f {
                let arg = std::f32::consts::TAU
                    * (self.fourier_b[[fi, 0]] * p[0]
                        + self.fourier_b[[fi, 1]] * p[1]
                        + self.fourier_b[[fi, 2]] * p[2]);
                out[[pi, fi]] = arg.cos();
                out[[pi, f + fi]] = arg.sin();
            }
        }
        out
    }

    /// Evaluate at arbitrary normalized points.
    pub fn eval_points(&self, pts: &[[f32; 3]]) -> Result<Vec<C32>> {
        let (out, _) = self.forward(pts);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ReprError::Evaluation(
                "network produced non-finite values".into(),
            ));
        }
        Ok(out
            .rows()
            .into_iter()
            .map(|r| C32::new(r[0], r[1]))
            .collect())
    }

    pub fn eval_mesh3(&self, mesh: &Mesh3D) -> Result<ndarray::Array3<C32>> {
        let pts = mesh3_points(mesh);
        let vals = self.eval_points(&pts)?;
        Ok(ndarray::Array3::from_shape_vec(mesh.dims(), vals).expect("shape matches"))
    }

    pub fn eval_mesh2(&self, mesh: &Mesh2D) -> Result<Array2<C32>> {
        let pts = mesh2_points(mesh);
        let vals = self.eval_points(&pts)?;
        Ok(Array2::from_shape_vec(mesh.dims(), vals).expect("shape matches"))
    }

    /// Recompute the forward pass at `pts` and accumulate parameter
    /// gradients for the complex upstream gradient.
    pub fn accum_grad_points(&mut self, pts: &[[f32; 3]], upstream: &[C32]) {
        assert_eq!(pts.len(), upstream.len());
        let (_, cache) = self.forward(pts);
        let mut dout = Array2::<f32>::zeros((pts.len(), 2));
        for (i, g) in upstream.iter().enumerate() {
            dout[[i, 0]] = g.re;
            dout[[i, 1]] = g.im;
        }
        self.backward(&cache, &dout);
    }

    fn backward(&mut self, cache: &InnCache, dout: &Array2<f32>) {
        // final layer
        self.final_w.g += &dout.t().dot(&cache.acts[self.hidden.len()]);
        {
            let sums = dout.sum_axis(Axis(0));
            let mut g = self.final_b.g.row_mut(0);
            g += &sums;
        }
        let mut d = dout.dot(&self.final_w.w); // [P, width]
        for (li, layer) in self.hidden.iter_mut().enumerate().rev() {
            let lc = &cache.layers[li];
            // relu
            d.zip_mut_with(&lc.relu_in, |dv, &z| {
                if z <= 0.0 {
                    *dv = 0.0;
                }
            });
            // layer norm: y = gain * x_hat + bias
            let gain = layer.ln_gain.w.row(0).to_owned();
            {
                let mut ggain = layer.ln_gain.g.row_mut(0);
                let mut gbias = layer.ln_bias.g.row_mut(0);
                for p in 0..d.dim().0 {
                    for c in 0..d.dim().1 {
                        ggain[c] += d[[p, c]] * lc.x_hat[[p, c]];
                        gbias[c] += d[[p, c]];
                    }
                }
            }
            let width = d.dim().1 as f32;
            for p in 0..d.dim().0 {
                // per-row layer norm backward
                let istd = lc.inv_std[p];
                let mut mean1 = 0.0f32;
                let mut mean2 = 0.0f32;
                for c in 0..d.dim().1 {
                    let dxh = d[[p, c]] * gain[c];
                    mean1 += dxh;
                    mean2 += dxh * lc.x_hat[[p, c]];
                }
                mean1 /= width;
                mean2 /= width;
                for c in 0..d.dim().1 {
                    let dxh = d[[p, c]] * gain[c];
                    d[[p, c]] = istd * (dxh - mean1 - lc.x_hat[[p, c]] * mean2);
                }
            }
            // linear
            layer.w.g += &d.t().dot(&cache.acts[li]);
            {
                let sums = d.sum_axis(Axis(0));
                let mut g = layer.b.g.row_mut(0);
                g += &sums;
            }
            d = d.dot(&layer.w.w);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.g.fill(0.0);
        }
    }

    pub fn adam_step(&mut self, lr: f32) {
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for p in self.params_mut() {
            ndarray::Zip::from(&mut p.w)
                .and(&p.g)
                .and(&mut p.m)
                .and(&mut p.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }

    /// Fit the network to target values at the given points; used for
    /// approximation-quality studies.
    pub fn fit(
        &mut self,
        pts: &[[f32; 3]],
        targets: &[C32],
        steps: usize,
        batch: usize,
        lr: f32,
        seed: u64,
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..pts.len())).collect();
            let bp: Vec<[f32; 3]> = idx.iter().map(|&i| pts[i]).collect();
            let bt: Vec<C32> = idx.iter().map(|&i| targets[i]).collect();
            let vals = self.eval_points(&bp)?;
            let scale = 2.0 / batch as f32;
            let up: Vec<C32> = vals
                .iter()
                .zip(bt.iter())
                .map(|(v, t)| (v - t) * scale)
                .collect();
            self.zero_grad();
            self.accum_grad_points(&bp, &up);
            self.adam_step(lr);
        }
        Ok(())
    }
}

struct LayerCache {
    relu_in: Array2<f32>, // value entering relu (after norm affine)
    x_hat: Array2<f32>,
    inv_std: Vec<f32>,
}

struct InnCache {
    /// Input activations of each linear layer; index `depth` is the final
    /// layer's input.
    acts: Vec<Array2<f32>>,
    layers: Vec<LayerCache>,
}

impl Inn {
    fn forward(&self, pts: &[[f32; 3]]) -> (Array2<f32>, InnCache) {
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut h = self.gamma(pts);
        for layer in &self.hidden {
            acts.push(h.clone());
            let mut z = h.dot(&layer.w.w.t());
            {
                let b = layer.b.w.row(0);
                for mut row in z.rows_mut() {
                    row += &b;
                }
            }
            // per-row layer norm
            let width = z.dim().1 as f32;
            let mut x_hat = Array2::<f32>::zeros(z.raw_dim());
            let mut inv_std = Vec::with_capacity(z.dim().0);
            let gain = layer.ln_gain.w.row(0);
            let bias = layer.ln_bias.w.row(0);
            let mut relu_in = Array2::<f32>::zeros(z.raw_dim());
            for (p, row) in z.rows().into_iter().enumerate() {
                let mean = row.sum() / width;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / width;
                let istd = 1.0 / (var + LN_EPS).sqrt();
                inv_std.push(istd);
                for (c, &v) in row.iter().enumerate() {
                    let xh = (v - mean) * istd;
                    x_hat[[p, c]] = xh;
                    relu_in[[p, c]] = gain[c] * xh + bias[c];
                }
            }
            h = relu_in.mapv(|v| v.max(0.0));
            layers.push(LayerCache {
                relu_in,
                x_hat,
                inv_std,
            });
        }
        acts.push(h.clone());
        let mut out = h.dot(&self.final_w.w.t());
        {
            let b = self.final_b.w.row(0);
            for mut row in out.rows_mut() {
                row += &b;
            }
        }
        (out, InnCache { acts, layers })
    }
}

pub fn mesh3_points(mesh: &Mesh3D) -> Vec<[f32; 3]> {
    let mut pts = Vec::with_capacity(mesh.len());
    for &x in &mesh.xs {
        for &y in &mesh.ys {
            for &z in &mesh.zs {
                pts.push([x, y, z]);
            }
        }
    }
    pts
}

pub fn mesh2_points(mesh: &Mesh2D) -> Vec<[f32; 3]> {
    let mut pts = Vec::with_capacity(mesh.len());
    for i in 0..mesh.xs.len() {
        for j in 0..mesh.ys.len() {
            pts.push(mesh.point(i, j));
        }
    }
    pts
}
