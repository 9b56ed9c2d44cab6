use ndarray::{Array2, Array4, ArrayD, Axis};

use super::{Param, Tensor4};

const GN_EPS: f32 = 1e-5;

/// Largest group count <= 32 that divides `c` while keeping at least four
/// channels per group (falling back to fewer for narrow layers).
pub fn group_count(c: usize) -> usize {
    let cap = 32.min((c / 4).max(1));
    let mut g = 1;
    for cand in 1..=cap {
        if c % cand == 0 {
            g = cand;
        }
    }
    g
}

/// Group normalization with learned per-channel scale and shift.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: Param, // [C]
    pub beta: Param,  // [C]
    pub groups: usize,
}

pub struct GroupNormCache {
    x_hat: Tensor4,
    inv_std: Array2<f32>, // [N, G]
}

impl GroupNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::from_elem(vec![c], 1.0f32)),
            beta: Param::new(ArrayD::zeros(vec![c])),
            groups: group_count(c),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, GroupNormCache) {
        let (n, c, h, w) = x.dim();
        let g = self.groups;
        let cg = c / g;
        let m = (cg * h * w) as f32;
        let gamma = super::bias_1d(&self.gamma);
        let beta = super::bias_1d(&self.beta);

        let mut x_hat = Array4::<f32>::zeros((n, c, h, w));
        let mut inv_std = Array2::<f32>::zeros((n, g));
        let mut y = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for gi in 0..g {
                let c0 = gi * cg;
                let mut mean = 0.0f32;
                for ci in c0..c0 + cg {
                    mean += x.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum();
                }
                mean /= m;
                let mut var = 0.0f32;
                for ci in c0..c0 + cg {
                    for v in x.index_axis(Axis(0), ni).index_axis(Axis(0), ci).iter() {
                        let d = v - mean;
                        var += d * d;
                    }
                }
                var /= m;
                let istd = 1.0 / (var + GN_EPS).sqrt();
                inv_std[[ni, gi]] = istd;
                for ci in c0..c0 + cg {
                    let ga = gamma[ci];
                    let be = beta[ci];
                    let src = x.index_axis(Axis(0), ni);
                    let src = src.index_axis(Axis(0), ci);
                    let mut xh = x_hat.index_axis_mut(Axis(0), ni);
                    let mut xh = xh.index_axis_mut(Axis(0), ci);
                    let mut dst = y.index_axis_mut(Axis(0), ni);
                    let mut dst = dst.index_axis_mut(Axis(0), ci);
                    for ((o, xv), hv) in dst.iter_mut().zip(src.iter()).zip(xh.iter_mut()) {
                        let xhv = (xv - mean) * istd;
                        *hv = xhv;
                        *o = ga * xhv + be;
                    }
                }
            }
        }
        (y, GroupNormCache { x_hat, inv_std })
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        self.forward(x).0
    }

    pub fn backward(&mut self, cache: &GroupNormCache, dy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = dy.dim();
        let g = self.groups;
        let cg = c / g;
        let m = (cg * h * w) as f32;
        let gamma = super::bias_1d(&self.gamma);

        // per-channel parameter grads
        {
            let mut ggamma = self
                .gamma
                .g
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            let mut gbeta = self
                .beta
                .g
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            for ci in 0..c {
                let mut dgam = 0.0f32;
                let mut dbet = 0.0f32;
                for ni in 0..n {
                    let d = dy.index_axis(Axis(0), ni);
                    let d = d.index_axis(Axis(0), ci);
                    let xh = cache.x_hat.index_axis(Axis(0), ni);
                    let xh = xh.index_axis(Axis(0), ci);
                    for (dv, hv) in d.iter().zip(xh.iter()) {
                        dgam += dv * hv;
                        dbet += dv;
                    }
                }
                ggamma[ci] += dgam;
                gbeta[ci] += dbet;
            }
        }

        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for gi in 0..g {
                let c0 = gi * cg;
                // means of dx_hat and dx_hat * x_hat over the group
                let mut s1 = 0.0f32;
                let mut s2 = 0.0f32;
                for ci in c0..c0 + cg {
                    let ga = gamma[ci];
                    let d = dy.index_axis(Axis(0), ni);
                    let d = d.index_axis(Axis(0), ci);
                    let xh = cache.x_hat.index_axis(Axis(0), ni);
                    let xh = xh.index_axis(Axis(0), ci);
                    for (dv, hv) in d.iter().zip(xh.iter()) {
                        let dxh = dv * ga;
                        s1 += dxh;
                        s2 += dxh * hv;
                    }
                }
                let mean1 = s1 / m;
                let mean2 = s2 / m;
                let istd = cache.inv_std[[ni, gi]];
                for ci in c0..c0 + cg {
                    let ga = gamma[ci];
                    let d = dy.index_axis(Axis(0), ni);
                    let d = d.index_axis(Axis(0), ci);
                    let xh = cache.x_hat.index_axis(Axis(0), ni);
                    let xh = xh.index_axis(Axis(0), ci);
                    let mut o = dx.index_axis_mut(Axis(0), ni);
                    let mut o = o.index_axis_mut(Axis(0), ci);
                    for ((ov, dv), hv) in o.iter_mut().zip(d.iter()).zip(xh.iter()) {
                        let dxh = dv * ga;
                        *ov = istd * (dxh - mean1 - hv * mean2);
                    }
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
