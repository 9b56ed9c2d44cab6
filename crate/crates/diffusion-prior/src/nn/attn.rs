use ndarray::{s, Array2, Array4, ArrayD, Axis};
use rand::Rng;

use super::norm::{GroupNorm, GroupNormCache};
use super::{kaiming, Param, Tensor4};

/// Single-head self-attention over spatial positions with a residual
/// connection, applied at coarse feature-map levels.
#[derive(Debug, Clone)]
pub struct SelfAttention2d {
    pub norm: GroupNorm,
    pub w_qkv: Param, // [3C, C]
    pub b_qkv: Param, // [3C]
    pub w_proj: Param, // [C, C]
    pub b_proj: Param, // [C]
}

pub struct AttnCache {
    norm: GroupNormCache,
    items: Vec<AttnItemCache>,
}

struct AttnItemCache {
    feats: Array2<f32>, // [C, HW]
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    a: Array2<f32>,   // softmax weights [HW, HW]
    out: Array2<f32>, // pre-projection [C, HW]
}

impl SelfAttention2d {
    pub fn new(rng: &mut impl Rng, c: usize) -> Self {
        Self {
            norm: GroupNorm::new(c),
            w_qkv: Param::new(kaiming(rng, &[3 * c, c], c)),
            b_qkv: Param::new(ArrayD::zeros(vec![3 * c])),
            // zero-init the projection so the block starts as an identity
            w_proj: Param::new(ArrayD::zeros(vec![c, c])),
            b_proj: Param::new(ArrayD::zeros(vec![c])),
        }
    }

    fn mats(&self) -> (Array2<f32>, Array2<f32>) {
        (
            self.w_qkv
                .w
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
                .to_owned(),
            self.w_proj
                .w
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
                .to_owned(),
        )
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, AttnCache) {
        let (n, c, h, w) = x.dim();
        let hw = h * w;
        let (normed, norm_cache) = self.norm.forward(x);
        let (w_qkv, w_proj) = self.mats();
        let b_qkv = super::bias_1d(&self.b_qkv);
        let b_proj = super::bias_1d(&self.b_proj);
        let scale = 1.0 / (c as f32).sqrt();

        let mut y = x.clone();
        let mut items = Vec::with_capacity(n);
        for ni in 0..n {
            let feats = normed
                .index_axis(Axis(0), ni)
                .into_shape_with_order((c, hw))
                .unwrap()
                .to_owned();
            let mut qkv = w_qkv.dot(&feats); // [3C, HW]
            for (mut row, &bv) in qkv.rows_mut().into_iter().zip(b_qkv.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
            let q = qkv.slice(s![0..c, ..]).to_owned();
            let k = qkv.slice(s![c..2 * c, ..]).to_owned();
            let v = qkv.slice(s![2 * c..3 * c, ..]).to_owned();
            let mut scores = q.t().dot(&k); // [HW, HW]
            scores.mapv_inplace(|s| s * scale);
            let a = softmax_rows(&scores);
            let out = v.dot(&a.t()); // [C, HW]
            let mut proj = w_proj.dot(&out);
            for (mut row, &bv) in proj.rows_mut().into_iter().zip(b_proj.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
            let mut yi = y.index_axis_mut(Axis(0), ni);
            let proj4 = proj.into_shape_with_order((c, h, w)).unwrap();
            yi += &proj4;
            items.push(AttnItemCache {
                feats,
                q,
                k,
                v,
                a,
                out,
            });
        }
        (
            y,
            AttnCache {
                norm: norm_cache,
                items,
            },
        )
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        self.forward(x).0
    }

    pub fn backward(&mut self, cache: &AttnCache, dy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = dy.dim();
        let hw = h * w;
        let (w_qkv, w_proj) = self.mats();
        let scale = 1.0 / (c as f32).sqrt();

        let mut d_normed = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            let it = &cache.items[ni];
            let dyi = dy
                .index_axis(Axis(0), ni)
                .into_shape_with_order((c, hw))
                .unwrap()
                .to_owned();

            // projection
            {
                let dwp = dyi.dot(&it.out.t());
                let mut g = self
                    .w_proj
                    .g
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                g += &dwp;
                let mut gb = self
                    .b_proj
                    .g
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix1>()
                    .unwrap();
                gb += &dyi.sum_axis(Axis(1));
            }
            let dout = w_proj.t().dot(&dyi); // [C, HW]

            // out = v a^T
            let dv = dout.dot(&it.a); // [C, HW]
            let da = dout.t().dot(&it.v); // [HW, HW]
            // softmax backward: ds = a * (da - rowsum(da * a))
            let mut ds = Array2::<f32>::zeros((hw, hw));
            for i in 0..hw {
                let arow = it.a.row(i);
                let darow = da.row(i);
                let dot: f32 = arow.iter().zip(darow.iter()).map(|(a, d)| a * d).sum();
                for j in 0..hw {
                    ds[[i, j]] = arow[j] * (darow[j] - dot);
                }
            }
            ds.mapv_inplace(|v| v * scale);
            let dq = it.k.dot(&ds.t());
            let dk = it.q.dot(&ds);

            // qkv joint
            let mut dqkv = Array2::<f32>::zeros((3 * c, hw));
            dqkv.slice_mut(s![0..c, ..]).assign(&dq);
            dqkv.slice_mut(s![c..2 * c, ..]).assign(&dk);
            dqkv.slice_mut(s![2 * c..3 * c, ..]).assign(&dv);
            {
                let dwq = dqkv.dot(&it.feats.t());
                let mut g = self
                    .w_qkv
                    .g
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                g += &dwq;
                let mut gb = self
                    .b_qkv
                    .g
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix1>()
                    .unwrap();
                gb += &dqkv.sum_axis(Axis(1));
            }
            let dfeats = w_qkv.t().dot(&dqkv);
            d_normed
                .index_axis_mut(Axis(0), ni)
                .assign(&dfeats.into_shape_with_order((c, h, w)).unwrap());
        }
        let mut dx = self.norm.backward(&cache.norm, &d_normed);
        dx += dy; // residual path
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.norm.params_mut();
        p.push(&mut self.w_qkv);
        p.push(&mut self.b_qkv);
        p.push(&mut self.w_proj);
        p.push(&mut self.b_proj);
        p
    }
}

fn softmax_rows(scores: &Array2<f32>) -> Array2<f32> {
    let mut a = scores.clone();
    for mut row in a.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_input_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_proj_starts_as_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attn = SelfAttention2d::new(&mut rng, 4);
        let x = Array4::from_shape_simple_fn((1, 4, 3, 3), || rng.gen_range(-1.0..1.0f32));
        let (y, _) = attn.forward(&x);
        for (a, b) in y.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gradcheck_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut attn = SelfAttention2d::new(&mut rng, 4);
        // non-zero projection so the attention path carries gradient
        attn.w_proj.w = kaiming(&mut rng, &[4, 4], 4);
        let x = Array4::from_shape_simple_fn((2, 4, 3, 3), || rng.gen_range(-1.0..1.0f32));
        let proj = Array4::from_shape_simple_fn((2, 4, 3, 3), || rng.gen_range(-1.0..1.0f32));
        let (_, cache) = attn.forward(&x);
        let dx = attn.backward(&cache, &proj);
        let a2 = attn.clone();
        check_input_grad(|xx| a2.infer(xx), &dx, &x, &proj, 1e-3, 3e-2);
    }
}
