use ndarray::{Array1, Array2, Array3, Array4, ArrayD, ArrayView3, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::{kaiming, Param, Tensor4};

/// 2D convolution, NCHW, square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param, // [C_out, C_in, k, k]
    pub b: Param, // [C_out]
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCache {
    x: Tensor4,
}

impl Conv2d {
    pub fn new(rng: &mut impl Rng, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        let fan_in = c_in * k * k;
        Self {
            w: Param::new(kaiming(rng, &[c_out, c_in, k, k], fan_in)),
            b: Param::new(ArrayD::zeros(vec![c_out])),
            stride,
            pad: (k - 1) / 2,
        }
    }

    /// Zero-initialized variant; used on block output convolutions so
    /// residual blocks start as identities.
    pub fn zeros(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self {
            w: Param::new(ArrayD::zeros(vec![c_out, c_in, k, k])),
            b: Param::new(ArrayD::zeros(vec![c_out])),
            stride,
            pad: (k - 1) / 2,
        }
    }

    fn k(&self) -> usize {
        self.w.w.shape()[2]
    }

    pub fn c_out(&self) -> usize {
        self.w.w.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.w.w.shape()[1]
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.k();
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    fn w_mat(&self) -> Array2<f32> {
        let c_out = self.c_out();
        let cols = self.c_in() * self.k() * self.k();
        self.w
            .w
            .view()
            .into_shape_with_order((c_out, cols))
            .unwrap()
            .to_owned()
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, Conv2dCache) {
        let y = self.infer(x);
        (y, Conv2dCache { x: x.clone() })
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let w_mat = self.w_mat();
        let bias = super::bias_1d(&self.b);
        let outs: Vec<Array3<f32>> = (0..n)
            .into_par_iter()
            .map(|ni| {
                let xi = x.index_axis(Axis(0), ni);
                let col = im2col(&xi, self.k(), self.stride, self.pad);
                let mut out = w_mat.dot(&col); // [C_out, oh*ow]
                for (mut row, &bv) in out.rows_mut().into_iter().zip(bias.iter()) {
                    row.mapv_inplace(|v| v + bv);
                }
                out.into_shape_with_order((self.c_out(), oh, ow)).unwrap()
            })
            .collect();
        stack4(outs)
    }

    pub fn backward(&mut self, cache: &Conv2dCache, dy: &Tensor4) -> Tensor4 {
        let x = &cache.x;
        let (n, c_in, h, w) = x.dim();
        let (_, c_out, oh, ow) = dy.dim();
        let k = self.k();
        let w_mat = self.w_mat();
        let parts: Vec<(Array3<f32>, Array2<f32>, Array1<f32>)> = (0..n)
            .into_par_iter()
            .map(|ni| {
                let xi = x.index_axis(Axis(0), ni);
                let col = im2col(&xi, k, self.stride, self.pad);
                let dy_mat = dy
                    .index_axis(Axis(0), ni)
                    .into_shape_with_order((c_out, oh * ow))
                    .unwrap()
                    .to_owned();
                let dw = dy_mat.dot(&col.t()); // [C_out, C_in*k*k]
                let db = dy_mat.sum_axis(Axis(1));
                let dcol = w_mat.t().dot(&dy_mat); // [C_in*k*k, oh*ow]
                let dx = col2im(&dcol, c_in, h, w, k, self.stride, self.pad);
                (dx, dw, db)
            })
            .collect();

        let mut dx = Array4::<f32>::zeros((n, c_in, h, w));
        let mut gw = self
            .w
            .g
            .view_mut()
            .into_shape_with_order((c_out, c_in * k * k))
            .unwrap();
        let mut gb = self
            .b
            .g
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        for (ni, (dxi, dw, db)) in parts.into_iter().enumerate() {
            dx.index_axis_mut(Axis(0), ni).assign(&dxi);
            gw += &dw;
            gb += &db;
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

fn stack4(items: Vec<Array3<f32>>) -> Tensor4 {
    let (c, h, w) = items[0].dim();
    let mut out = Array4::<f32>::zeros((items.len(), c, h, w));
    for (ni, it) in items.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), ni).assign(&it);
    }
    out
}

/// Unfold one item `[C, H, W]` into `[C*k*k, oh*ow]` patch columns.
fn im2col(x: &ArrayView3<f32>, k: usize, stride: usize, pad: usize) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut col = Array2::<f32>::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let mut dst = col.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * stride + di).wrapping_sub(pad);
                    if iy >= h {
                        continue; // zero padding
                    }
                    let src_row = plane.row(iy);
                    let base = oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + dj).wrapping_sub(pad);
                        if ix < w {
                            dst[base + ox] = src_row[ix];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col`: scatter-add patch columns back to `[C, H, W]`.
fn col2im(
    col: &Array2<f32>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f32> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut x = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        let mut plane = x.index_axis_mut(Axis(0), ci);
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let src = col.row(row);
                for oy in 0..oh {
                    let iy = (oy * stride + di).wrapping_sub(pad);
                    if iy >= h {
                        continue;
                    }
                    let base = oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + dj).wrapping_sub(pad);
                        if ix < w {
                            plane[[iy, ix]] += src[base + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Per-channel spatial convolution with odd kernel and same-size output.
/// The taps can be swapped at inference time for resolution-adapted kernels
/// of a different (odd) size.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub w: Param, // [C, k, k]
}

pub struct DepthwiseCache {
    x: Tensor4,
}

impl DepthwiseConv2d {
    pub fn new(rng: &mut impl Rng, c: usize, k: usize) -> Self {
        assert!(k % 2 == 1);
        Self {
            w: Param::new(kaiming(rng, &[c, k, k], k * k)),
        }
    }

    pub fn channels(&self) -> usize {
        self.w.w.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.w.w.shape()[1]
    }

    pub fn taps(&self) -> Array3<f32> {
        self.w
            .w
            .view()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap()
            .to_owned()
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, DepthwiseCache) {
        let taps = self.taps();
        let y = depthwise_apply(x, &taps.view());
        (y, DepthwiseCache { x: x.clone() })
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        depthwise_apply(x, &self.taps().view())
    }

    /// Inference with replacement taps (kernel interpolation overrides).
    pub fn infer_with(&self, x: &Tensor4, taps: &Array3<f32>) -> Tensor4 {
        assert_eq!(taps.dim().0, self.channels(), "override channel mismatch");
        depthwise_apply(x, &taps.view())
    }

    pub fn backward(&mut self, cache: &DepthwiseCache, dy: &Tensor4) -> Tensor4 {
        let taps = self.taps();
        let k = taps.dim().1;
        let pad = (k - 1) / 2;
        let x = &cache.x;
        let (n, c, h, w) = x.dim();

        // dx: correlate dy with flipped taps == convolution with taps
        let mut flipped = Array3::<f32>::zeros(taps.raw_dim());
        for ci in 0..c {
            for i in 0..k {
                for j in 0..k {
                    flipped[[ci, i, j]] = taps[[ci, k - 1 - i, k - 1 - j]];
                }
            }
        }
        let dx = depthwise_apply(dy, &flipped.view());

        // dW
        let parts: Vec<Array3<f32>> = (0..n)
            .into_par_iter()
            .map(|ni| {
                let mut dw = Array3::<f32>::zeros((c, k, k));
                let xi = x.index_axis(Axis(0), ni);
                let dyi = dy.index_axis(Axis(0), ni);
                for ci in 0..c {
                    let xp = xi.index_axis(Axis(0), ci);
                    let dp = dyi.index_axis(Axis(0), ci);
                    for di in 0..k {
                        for dj in 0..k {
                            let mut acc = 0.0f32;
                            for oy in 0..h {
                                let iy = (oy + di).wrapping_sub(pad);
                                if iy >= h {
                                    continue;
                                }
                                for ox in 0..w {
                                    let ix = (ox + dj).wrapping_sub(pad);
                                    if ix < w {
                                        acc += dp[[oy, ox]] * xp[[iy, ix]];
                                    }
                                }
                            }
                            dw[[ci, di, dj]] = acc;
                        }
                    }
                }
                dw
            })
            .collect();
        let mut g = self
            .w
            .g
            .view_mut()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        for dw in parts {
            g += &dw;
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w]
    }
}

fn depthwise_apply(x: &Tensor4, taps: &ArrayView3<f32>) -> Tensor4 {
    let (n, c, h, w) = x.dim();
    let k = taps.dim().1;
    let pad = (k - 1) / 2;
    let outs: Vec<Array3<f32>> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let xi = x.index_axis(Axis(0), ni);
            let mut out = Array3::<f32>::zeros((c, h, w));
            for ci in 0..c {
                let xp = xi.index_axis(Axis(0), ci);
                let mut op = out.index_axis_mut(Axis(0), ci);
                for di in 0..k {
                    for dj in 0..k {
                        let t = taps[[ci, di, dj]];
                        if t == 0.0 {
                            continue;
                        }
                        for oy in 0..h {
                            let iy = (oy + di).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            let src = xp.row(iy);
                            let mut dst = op.row_mut(oy);
                            for ox in 0..w {
                                let ix = (ox + dj).wrapping_sub(pad);
                                if ix < w {
                                    dst[ox] += t * src[ix];
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    stack4(outs)
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::<f32>::zeros((n, c, h * 2, w * 2));
    for ni in 0..n {
        for ci in 0..c {
            let src = x.index_axis(Axis(0), ni);
            let src = src.index_axis(Axis(0), ci);
            let mut dst = y.index_axis_mut(Axis(0), ni);
            let mut dst = dst.index_axis_mut(Axis(0), ci);
            for i in 0..h * 2 {
                for j in 0..w * 2 {
                    dst[[i, j]] = src[[i / 2, j / 2]];
                }
            }
        }
    }
    y
}

/// Adjoint of `upsample2`: sum each 2x2 block.
pub fn upsample2_backward(dy: &Tensor4) -> Tensor4 {
    let (n, c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::<f32>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let src = dy.index_axis(Axis(0), ni);
            let src = src.index_axis(Axis(0), ci);
            let mut dst = dx.index_axis_mut(Axis(0), ni);
            let mut dst = dst.index_axis_mut(Axis(0), ci);
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[[i / 2, j / 2]] += src[[i, j]];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_input_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Tensor4 {
        use rand::Rng;
        Array4::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0f32))
    }

    #[test]
    fn conv_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new(&mut rng, 2, 3, 3, 1);
        let x = rand_t4(&mut rng, (1, 2, 5, 5));
        let (y, _) = conv.forward(&x);
        // direct correlation at one output position
        let (oy, ox) = (2usize, 3usize);
        for co in 0..3 {
            let mut acc = conv.b.w.as_slice().unwrap()[co];
            for ci in 0..2 {
                for di in 0..3 {
                    for dj in 0..3 {
                        let iy = oy + di - 1;
                        let ix = ox + dj - 1;
                        if iy < 5 && ix < 5 {
                            acc += conv.w.w[[co, ci, di, dj]] * x[[0, ci, iy, ix]];
                        }
                    }
                }
            }
            assert!((y[[0, co, oy, ox]] - acc).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(&mut rng, 2, 4, 3, 1);
        let x = rand_t4(&mut rng, (2, 2, 6, 6));
        let proj = rand_t4(&mut rng, (2, 4, 6, 6));
        let (_, cache) = conv.forward(&x);
        let dx = conv.backward(&cache, &proj);
        let c2 = conv.clone();
        check_input_grad(|xx| c2.infer(xx), &dx, &x, &proj, 1e-3, 2e-2);
    }

    #[test]
    fn strided_conv_shapes_and_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(&mut rng, 3, 3, 3, 2);
        let x = rand_t4(&mut rng, (1, 3, 8, 8));
        let (y, cache) = conv.forward(&x);
        assert_eq!(y.dim(), (1, 3, 4, 4));
        let proj = rand_t4(&mut rng, (1, 3, 4, 4));
        let dx = conv.backward(&cache, &proj);
        let c2 = conv.clone();
        check_input_grad(|xx| c2.infer(xx), &dx, &x, &proj, 1e-3, 2e-2);
    }

    #[test]
    fn conv_weight_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::new(&mut rng, 2, 2, 3, 1);
        let x = rand_t4(&mut rng, (1, 2, 5, 5));
        let proj = rand_t4(&mut rng, (1, 2, 5, 5));
        let (_, cache) = conv.forward(&x);
        conv.backward(&cache, &proj);
        let analytic = conv.w.g.clone();
        let eps = 1e-3;
        for flat in (0..conv.w.len()).step_by(7) {
            let orig = conv.w.w.as_slice().unwrap()[flat];
            conv.w.w.as_slice_mut().unwrap()[flat] = orig + eps;
            let lp: f32 = (conv.infer(&x) * &proj).sum();
            conv.w.w.as_slice_mut().unwrap()[flat] = orig - eps;
            let lm: f32 = (conv.infer(&x) * &proj).sum();
            conv.w.w.as_slice_mut().unwrap()[flat] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = analytic.as_slice().unwrap()[flat];
            assert!(
                (fd - an).abs() < 2e-2 * an.abs().max(1.0),
                "flat {flat}: fd {fd} vs {an}"
            );
        }
    }

    #[test]
    fn depthwise_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut dw = DepthwiseConv2d::new(&mut rng, 3, 5);
        let x = rand_t4(&mut rng, (2, 3, 7, 7));
        let proj = rand_t4(&mut rng, (2, 3, 7, 7));
        let (_, cache) = dw.forward(&x);
        let dx = dw.backward(&cache, &proj);
        let d2 = dw.clone();
        check_input_grad(|xx| d2.infer(xx), &dx, &x, &proj, 1e-3, 2e-2);
    }

    #[test]
    fn depthwise_override_size_differs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dw = DepthwiseConv2d::new(&mut rng, 2, 3);
        let x = rand_t4(&mut rng, (1, 2, 6, 6));
        let taps5 = Array3::<f32>::from_shape_simple_fn((2, 5, 5), || 0.01);
        let y = dw.infer_with(&x, &taps5);
        assert_eq!(y.dim(), (1, 2, 6, 6));
    }

    #[test]
    fn upsample_round_trip_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_t4(&mut rng, (1, 2, 4, 4));
        let y = rand_t4(&mut rng, (1, 2, 8, 8));
        let ux = upsample2(&x);
        let uty = upsample2_backward(&y);
        let lhs: f32 = (&ux * &y).sum();
        let rhs: f32 = (&x * &uty).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
    }
}
