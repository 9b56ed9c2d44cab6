//! Minimal dense NN stack for the 2D slice denoiser: explicit
//! forward/backward per layer, f32 throughout, `[N, C, H, W]` tensors.

pub mod attn;
pub mod conv;
pub mod norm;
pub mod unet;

use ndarray::{Array1, Array4, ArrayD};
use rand::Rng;

pub type Tensor4 = Array4<f32>;

/// One trainable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub w: ArrayD<f32>,
    pub g: ArrayD<f32>,
}

impl Param {
    pub fn new(w: ArrayD<f32>) -> Self {
        let g = ArrayD::zeros(w.raw_dim());
        Self { w, g }
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }
}

/// Uniform Kaiming-style init over fan-in.
pub fn kaiming(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f32> {
    let bound = (1.0 / fan_in as f32).sqrt();
    ArrayD::from_shape_simple_fn(shape.to_vec(), || rng.gen_range(-bound..bound))
}

/// SiLU activation with its input cached for the backward pass.
pub fn silu(x: &Tensor4) -> Tensor4 {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let s = sigmoid(v);
        *d *= s * (1.0 + v * (1.0 - s));
    });
    dx
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Sinusoidal timestep features of even dimension `dim`.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> ndarray::Array2<f32> {
    assert!(dim % 2 == 0 && dim >= 2);
    let half = dim / 2;
    let mut out = ndarray::Array2::<f32>::zeros((ts.len(), dim));
    let denom = if half > 1 { (half - 1) as f32 } else { 1.0 };
    for (n, &t) in ts.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10000.0f32).ln() * i as f32 / denom).exp();
            let arg = t as f32 * freq;
            out[[n, i]] = arg.sin();
            out[[n, half + i]] = arg.cos();
        }
    }
    out
}

/// Fully connected layer on `[N, F]` features.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param, // [out, in]
    pub b: Param, // [out]
}

pub struct LinearCache {
    x: ndarray::Array2<f32>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, in_f: usize, out_f: usize) -> Self {
        Self {
            w: Param::new(kaiming(rng, &[out_f, in_f], in_f)),
            b: Param::new(ArrayD::zeros(vec![out_f])),
        }
    }

    pub fn out_features(&self) -> usize {
        self.w.w.shape()[0]
    }

    pub fn forward(&self, x: &ndarray::Array2<f32>) -> (ndarray::Array2<f32>, LinearCache) {
        let w = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = self.b.w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        for mut row in y.rows_mut() {
            row += &b;
        }
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &ndarray::Array2<f32>) -> ndarray::Array2<f32> {
        let w = self.w.w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let dx = dy.dot(&w);
        let dw = dy.t().dot(&cache.x);
        let mut g = self.w.g.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
        g += &dw;
        let mut gb = self.b.g.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        gb += &dy.sum_axis(ndarray::Axis(0));
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Broadcast-add a per-(item, channel) bias onto a feature map.
pub fn add_channel_bias(x: &mut Tensor4, bias: &ndarray::Array2<f32>) {
    let (n, c, _, _) = x.dim();
    for ni in 0..n {
        for ci in 0..c {
            let b = bias[[ni, ci]];
            x.index_axis_mut(ndarray::Axis(0), ni)
                .index_axis_mut(ndarray::Axis(0), ci)
                .mapv_inplace(|v| v + b);
        }
    }
}

/// Gradient of `add_channel_bias` w.r.t. the bias.
pub fn channel_bias_grad(dy: &Tensor4) -> ndarray::Array2<f32> {
    let (n, c, _, _) = dy.dim();
    let mut g = ndarray::Array2::<f32>::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            g[[ni, ci]] = dy
                .index_axis(ndarray::Axis(0), ni)
                .index_axis(ndarray::Axis(0), ci)
                .sum();
        }
    }
    g
}

pub fn bias_1d(b: &Param) -> Array1<f32> {
    b.w.view()
        .into_dimensionality::<ndarray::Ix1>()
        .unwrap()
        .to_owned()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    /// Central finite-difference check of dL/dx for L = sum(y * proj).
    pub fn check_input_grad(
        forward: impl Fn(&Tensor4) -> Tensor4,
        analytic_dx: &Tensor4,
        x: &Tensor4,
        proj: &Tensor4,
        eps: f32,
        tol: f32,
    ) {
        let mut max_err = 0.0f32;
        let mut max_ref = 0.0f32;
        // probe a deterministic subset of coordinates
        let len = x.len();
        let stride = (len / 23).max(1);
        for flat in (0..len).step_by(stride) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            {
                let s = xp.as_slice_mut().unwrap();
                s[flat] += eps;
            }
            {
                let s = xm.as_slice_mut().unwrap();
                s[flat] -= eps;
            }
            let lp: f32 = (forward(&xp) * proj).sum();
            let lm: f32 = (forward(&xm) * proj).sum();
            let fd = (lp - lm) / (2.0 * eps);
            let an = analytic_dx.as_slice().unwrap()[flat];
            max_err = max_err.max((fd - an).abs());
            max_ref = max_ref.max(an.abs().max(fd.abs()));
        }
        assert!(
            max_err <= tol * max_ref.max(1.0),
            "gradcheck failed: err {max_err} vs scale {max_ref}"
        );
    }
}
