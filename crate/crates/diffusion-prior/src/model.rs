use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use kernel_interp::DepthwiseKernel;

use crate::nn::unet::{UNet, UNetConfig};
use crate::nn::Tensor4;
use crate::{PriorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Plain 3x3 convolutions throughout.
    Unet,
    /// Depthwise + pointwise convolutions in the first and last residual
    /// blocks; the depthwise taps can be resized at inference time.
    InfUnet,
}

/// Denoiser architecture plus the training-provenance metadata carried in
/// checkpoints. Input and output are always the two (re, im) channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub arch: Arch,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub res_blocks: usize,
    pub attention_levels: Vec<usize>,
    /// Depthwise kernel size (inf_unet only).
    pub depthwise_k: usize,
    /// In-plane (h, d) pixel sizes in mm seen during training.
    pub train_voxel_sizes: Vec<[f32; 2]>,
    /// Whether training used diverse-resolution augmentation.
    pub diverse: bool,
}

pub const IN_CHANNELS: usize = 2;
/// Number of depthwise conv sites carrying resizable kernels.
pub const DEPTHWISE_SITES: usize = 4;

impl DenoiserConfig {
    /// Desk-scale default: ~2M parameters with the capacity concentrated at
    /// the coarse levels.
    pub fn desk_default() -> Self {
        Self {
            arch: Arch::Unet,
            base_channels: 16,
            channel_mults: vec![1, 2, 4, 7],
            res_blocks: 1,
            attention_levels: vec![3],
            depthwise_k: 7,
            train_voxel_sizes: Vec::new(),
            diverse: false,
        }
    }

    /// Small configuration for fast experiments on 32-ish slices.
    pub fn small() -> Self {
        Self {
            arch: Arch::Unet,
            base_channels: 16,
            channel_mults: vec![1, 2, 4],
            res_blocks: 1,
            attention_levels: vec![2],
            depthwise_k: 7,
            train_voxel_sizes: Vec::new(),
            diverse: false,
        }
    }

    pub fn with_arch(mut self, arch: Arch) -> Self {
        self.arch = arch;
        self
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            in_channels: IN_CHANNELS,
            base_channels: self.base_channels,
            channel_mults: self.channel_mults.clone(),
            res_blocks: self.res_blocks,
            attention_levels: self.attention_levels.clone(),
            depthwise_k: match self.arch {
                Arch::Unet => None,
                Arch::InfUnet => Some(self.depthwise_k),
            },
        }
    }

    pub fn divisor(&self) -> usize {
        1 << (self.channel_mults.len() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return Err(PriorError::invalid(
                "base_channels must be a positive multiple of 4",
            ));
        }
        if self.channel_mults.is_empty() || self.res_blocks == 0 {
            return Err(PriorError::invalid("need at least one level and block"));
        }
        if self.arch == Arch::InfUnet && self.depthwise_k % 2 == 0 {
            return Err(PriorError::invalid("depthwise kernel size must be odd"));
        }
        Ok(())
    }
}

/// Anything that predicts the noise content of a batch of noisy two-channel
/// slices at given timesteps. Implemented by trained denoisers and by the
/// closures used as test stubs.
pub trait EpsModel: Sync {
    fn predict_eps(&self, x: &Tensor4, ts: &[usize]) -> Tensor4;
}

impl<F: Fn(&Tensor4, &[usize]) -> Tensor4 + Sync> EpsModel for F {
    fn predict_eps(&self, x: &Tensor4, ts: &[usize]) -> Tensor4 {
        self(x, ts)
    }
}

/// Mirror-pad a `[N, 2, H, W]` batch up to multiples of `div` (right and
/// bottom edges), returning the padded batch and the original size.
pub fn reflect_pad_to_multiple(x: &Tensor4, div: usize) -> (Tensor4, (usize, usize)) {
    let (n, c, h, w) = x.dim();
    let ph = h.div_ceil(div) * div;
    let pw = w.div_ceil(div) * div;
    if ph == h && pw == w {
        return (x.clone(), (h, w));
    }
    assert!(ph - h <= h - 1 && pw - w <= w - 1, "pad exceeds mirror range");
    let mut out = Tensor4::zeros((n, c, ph, pw));
    for ni in 0..n {
        for ci in 0..c {
            let src = x.index_axis(Axis(0), ni);
            let src = src.index_axis(Axis(0), ci);
            let mut dst = out.index_axis_mut(Axis(0), ni);
            let mut dst = dst.index_axis_mut(Axis(0), ci);
            for i in 0..ph {
                let si = if i < h { i } else { 2 * h - 2 - i };
                for j in 0..pw {
                    let sj = if j < w { j } else { 2 * w - 2 - j };
                    dst[[i, j]] = src[[si, sj]];
                }
            }
        }
    }
    (out, (h, w))
}

pub fn crop_to(x: &Tensor4, hw: (usize, usize)) -> Tensor4 {
    x.slice(ndarray::s![.., .., 0..hw.0, 0..hw.1]).to_owned()
}

/// Mirror-pad one 2D slice (both channels) on the right/bottom.
pub fn reflect_pad_slice(x: &Array3<f32>, ph: usize, pw: usize) -> Array3<f32> {
    let (c, h, w) = x.dim();
    assert!(ph >= h && pw >= w);
    assert!(ph - h <= h - 1 && pw - w <= w - 1, "pad exceeds mirror range");
    let mut out = Array3::<f32>::zeros((c, ph, pw));
    for ci in 0..c {
        for i in 0..ph {
            let si = if i < h { i } else { 2 * h - 2 - i };
            for j in 0..pw {
                let sj = if j < w { j } else { 2 * w - 2 - j };
                out[[ci, i, j]] = x[[ci, si, sj]];
            }
        }
    }
    out
}

/// Inference-side denoiser: a U-Net carrying EMA weights, reflective
/// padding to the architecture's divisor, and optional resized depthwise
/// kernels. Evaluation is pure and chunked to bound memory.
pub struct EvalDenoiser {
    unet: UNet,
    pub config: DenoiserConfig,
    pub t_max: usize,
    overrides: Option<Vec<Array3<f32>>>,
    chunk: usize,
}

impl EvalDenoiser {
    pub fn new(unet: UNet, config: DenoiserConfig, t_max: usize) -> Self {
        Self {
            unet,
            config,
            t_max,
            overrides: None,
            chunk: 16,
        }
    }

    /// Install resized depthwise kernels (inf_unet only). The override list
    /// must carry one kernel per depthwise site with matching channels.
    pub fn set_overrides(&mut self, kernels: Option<&[DepthwiseKernel]>) -> Result<()> {
        match kernels {
            None => {
                self.overrides = None;
                Ok(())
            }
            Some(ks) => {
                if self.config.arch != Arch::InfUnet {
                    return Err(PriorError::invalid(
                        "kernel overrides require the inf_unet architecture",
                    ));
                }
                let trained = self
                    .unet
                    .depthwise_taps()
                    .ok_or_else(|| PriorError::invalid("model has no depthwise sites"))?;
                if ks.len() != trained.len() {
                    return Err(PriorError::invalid(format!(
                        "expected {} override kernels, got {}",
                        trained.len(),
                        ks.len()
                    )));
                }
                for (k, t) in ks.iter().zip(trained.iter()) {
                    if k.channels() != t.dim().0 {
                        return Err(PriorError::invalid(format!(
                            "override has {} channels, site needs {}",
                            k.channels(),
                            t.dim().0
                        )));
                    }
                    if k.size() % 2 == 0 {
                        return Err(PriorError::invalid("override kernels must be odd-sized"));
                    }
                }
                self.overrides = Some(ks.iter().map(|k| k.taps.clone()).collect());
                Ok(())
            }
        }
    }

    /// Trained depthwise kernels tagged with the training pixel size, in
    /// override order.
    pub fn depthwise_kernels(&self) -> Option<Vec<DepthwiseKernel>> {
        let taps = self.unet.depthwise_taps()?;
        let pixel = self
            .config
            .train_voxel_sizes
            .first()
            .copied()
            .unwrap_or([1.0, 1.0]);
        Some(
            taps.into_iter()
                .map(|t| DepthwiseKernel::new(t, pixel).expect("trained taps are valid"))
                .collect(),
        )
    }

    pub fn predict(&self, x: &Tensor4, ts: &[usize]) -> Result<Tensor4> {
        if ts.len() != x.dim().0 {
            return Err(PriorError::invalid("one timestep per batch item"));
        }
        if let Some(&bad) = ts.iter().find(|&&t| t >= self.t_max) {
            return Err(PriorError::invalid(format!(
                "timestep {bad} outside schedule range 0..{}",
                self.t_max
            )));
        }
        let (padded, orig) = reflect_pad_to_multiple(x, self.config.divisor());
        let n = padded.dim().0;
        let mut out = Tensor4::zeros(padded.raw_dim());
        let ov = self.overrides.as_deref();
        let mut start = 0;
        while start < n {
            let end = (start + self.chunk).min(n);
            let xs = padded.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let ys = self.unet.infer(&xs, &ts[start..end], ov);
            out.slice_mut(ndarray::s![start..end, .., .., ..]).assign(&ys);
            start = end;
        }
        Ok(crop_to(&out, orig))
    }
}

impl EpsModel for EvalDenoiser {
    fn predict_eps(&self, x: &Tensor4, ts: &[usize]) -> Tensor4 {
        self.predict(x, ts).expect("validated inputs")
    }
}

/// Noise prediction through a checkpoint's EMA weights, with reflective
/// padding and optional resized depthwise kernels.
pub fn denoise_eps(
    ckpt: &crate::Checkpoint,
    batch: &Tensor4,
    ts: &[usize],
    kernel_override: Option<&[DepthwiseKernel]>,
) -> Result<Tensor4> {
    let mut den = ckpt.eval_denoiser();
    den.set_overrides(kernel_override)?;
    den.predict(batch, ts)
}

/// Zero-noise stub: predicts no noise regardless of input.
pub fn zero_stub() -> impl EpsModel {
    |x: &Tensor4, _ts: &[usize]| Tensor4::zeros(x.raw_dim())
}

/// Constant-prediction stub returning a fixed tensor batch.
pub struct ConstStub(pub Tensor4);

impl EpsModel for ConstStub {
    fn predict_eps(&self, x: &Tensor4, _ts: &[usize]) -> Tensor4 {
        assert_eq!(self.0.dim(), x.dim());
        self.0.clone()
    }
}

/// Per-(item, channel) magnitude view helper used in tests.
pub fn batch_from_slices(slices: &[Array2<volume_core::C32>]) -> Tensor4 {
    let (h, w) = slices[0].dim();
    let mut out = Tensor4::zeros((slices.len(), 2, h, w));
    for (n, s) in slices.iter().enumerate() {
        assert_eq!(s.dim(), (h, w), "batch slices share one shape");
        for ((i, j), z) in s.indexed_iter() {
            out[[n, 0, i, j]] = z.re;
            out[[n, 1, i, j]] = z.im;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_padding_round_trips() {
        let x = Tensor4::from_shape_fn((1, 2, 9, 11), |(_, c, i, j)| {
            (c * 100 + i * 11 + j) as f32
        });
        let (p, orig) = reflect_pad_to_multiple(&x, 4);
        assert_eq!(p.dim(), (1, 2, 12, 12));
        assert_eq!(orig, (9, 11));
        let back = crop_to(&p, orig);
        assert_eq!(back, x);
        // mirrored without repeating the edge
        assert_eq!(p[[0, 0, 9, 0]], x[[0, 0, 7, 0]]);
        assert_eq!(p[[0, 0, 0, 11]], x[[0, 0, 0, 9]]);
    }

    #[test]
    fn divisible_input_is_untouched() {
        let x = Tensor4::zeros((2, 2, 8, 8));
        let (p, _) = reflect_pad_to_multiple(&x, 4);
        assert_eq!(p.dim(), (2, 2, 8, 8));
    }

    #[test]
    fn config_validation() {
        let mut c = DenoiserConfig::small();
        assert!(c.validate().is_ok());
        c.base_channels = 6;
        assert!(c.validate().is_err());
        let mut c = DenoiserConfig::small().with_arch(Arch::InfUnet);
        c.depthwise_k = 4;
        assert!(c.validate().is_err());
    }
}
