use ndarray::ArrayD;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{to_two_channel, SliceSource};
use crate::model::{reflect_pad_slice, DenoiserConfig, EpsModel};
use crate::nn::unet::UNet;
use crate::nn::{Param, Tensor4};
use crate::schedule::NoiseSchedule;
use crate::{Checkpoint, PriorError, Result};

/// First-order adaptive-moment optimizer.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.w.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.w.raw_dim())).collect();
        }
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let eps = self.eps;
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut p.w)
                .and(&p.g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

/// Exponential moving average of the parameter vector. Tracks the raw
/// parameters exactly until `start` steps have passed.
pub struct Ema {
    pub decay: f32,
    pub start: u64,
    pub values: Vec<ArrayD<f32>>,
}

impl Ema {
    pub fn from_params(params: &[&mut Param], decay: f32, start: u64) -> Self {
        Self {
            decay,
            start,
            values: params.iter().map(|p| p.w.clone()).collect(),
        }
    }

    pub fn update(&mut self, params: &[&mut Param], step: u64) {
        if step <= self.start {
            for (e, p) in self.values.iter_mut().zip(params.iter()) {
                e.assign(&p.w);
            }
        } else {
            let d = self.decay;
            for (e, p) in self.values.iter_mut().zip(params.iter()) {
                ndarray::Zip::from(e).and(&p.w).for_each(|e, &w| {
                    *e = d * *e + (1.0 - d) * w;
                });
            }
        }
    }
}

/// Draw noise and timesteps, then form `s_t = alpha_t s + sigma_t eps`.
pub fn make_noisy(
    slices: &Tensor4,
    ts: &[usize],
    eps: &Tensor4,
    schedule: &NoiseSchedule,
) -> Tensor4 {
    let mut out = eps.clone();
    for (n, &t) in ts.iter().enumerate() {
        let a = schedule.alpha[t] as f32;
        let s = schedule.sigma[t] as f32;
        let mut item = out.index_axis_mut(ndarray::Axis(0), n);
        let src = slices.index_axis(ndarray::Axis(0), n);
        ndarray::Zip::from(&mut item).and(&src).for_each(|o, &x| {
            *o = a * x + s * *o;
        });
    }
    out
}

/// Mean squared residual over every scalar element plus its gradient
/// w.r.t. the prediction.
pub fn ddpm_loss_terms(pred: &Tensor4, eps: &Tensor4) -> (f64, Tensor4) {
    let count = pred.len() as f64;
    let mut loss = 0.0f64;
    let mut dpred = pred.clone();
    ndarray::Zip::from(&mut dpred).and(eps).for_each(|p, &e| {
        let r = *p - e;
        loss += (r * r) as f64;
        *p = 2.0 * r / count as f32;
    });
    (loss / count, dpred)
}

pub fn sample_std_normal(rng: &mut impl Rng, shape: (usize, usize, usize, usize)) -> Tensor4 {
    Tensor4::from_shape_simple_fn(shape, || {
        let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
        let u2: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        (-2.0 * u1.ln()).sqrt() * u2.cos()
    })
}

/// One-sample estimate of the denoiser training objective on a batch of
/// clean slices: draw `t ~ U{0..T-1}` and unit noise per item, then return
/// the mean squared noise-prediction residual per scalar element.
pub fn ddpm_loss<M: EpsModel>(
    model: &M,
    slices: &Tensor4,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> f64 {
    let n = slices.dim().0;
    let ts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..schedule.t_max)).collect();
    let eps = sample_std_normal(rng, slices.dim());
    let noisy = make_noisy(slices, &ts, &eps, schedule);
    let pred = model.predict_eps(&noisy, &ts);
    ddpm_loss_terms(&pred, &eps).0
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f32,
    pub ema_decay: f32,
    pub ema_start: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-4,
            ema_decay: 0.999,
            ema_start: 500,
            seed: 0,
        }
    }
}

pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
}

/// Train a denoiser on slices drawn from `source`. Deterministic given the
/// seed and the single-threaded draw order.
pub fn train(
    config: &DenoiserConfig,
    source: &SliceSource,
    schedule: &NoiseSchedule,
    tcfg: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if source.is_empty() {
        return Err(PriorError::invalid("training source is empty"));
    }
    let mut config = config.clone();
    config.train_voxel_sizes = source.pixel_sizes();
    config.diverse = source.is_diverse();

    let mut net = UNet::new(&config.unet_config(), tcfg.seed);
    let mut adam = Adam::new(tcfg.lr);
    let mut ema = {
        let params = net.params_mut();
        Ema::from_params(&params, tcfg.ema_decay, tcfg.ema_start)
    };

    let divisor = config.divisor();
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut losses = Vec::with_capacity(tcfg.steps as usize);

    for step in 1..=tcfg.steps {
        // Slices are padded to their own divisor-aligned shape; draws of
        // different sizes (diverse training) are grouped by shape and the
        // gradients accumulated before the single optimizer step.
        let drawn: Vec<_> = (0..tcfg.batch_size).map(|_| source.sample(&mut rng)).collect();
        let mut groups: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
            std::collections::BTreeMap::new();
        for (i, s) in drawn.iter().enumerate() {
            let (h, w) = s.data.dim();
            let key = (h.div_ceil(divisor) * divisor, w.div_ceil(divisor) * divisor);
            groups.entry(key).or_default().push(i);
        }

        net.zero_grad();
        let mut residual_sq = 0.0f64;
        let mut total_elems = 0usize;
        let mut passes = Vec::new();
        for (&(ph, pw), members) in &groups {
            let mut batch = Tensor4::zeros((members.len(), 2, ph, pw));
            for (n, &i) in members.iter().enumerate() {
                let two = to_two_channel(&drawn[i].data);
                let padded = reflect_pad_slice(&two, ph, pw);
                batch.index_axis_mut(ndarray::Axis(0), n).assign(&padded);
            }
            let ts: Vec<usize> = members
                .iter()
                .map(|_| rng.gen_range(0..schedule.t_max))
                .collect();
            let eps = sample_std_normal(&mut rng, batch.dim());
            let noisy = make_noisy(&batch, &ts, &eps, schedule);
            let (pred, cache) = net.forward(&noisy, &ts);
            let mut residual = pred;
            ndarray::Zip::from(&mut residual).and(&eps).for_each(|p, &e| {
                let r = *p - e;
                residual_sq += (r * r) as f64;
                *p = r;
            });
            total_elems += residual.len();
            passes.push((cache, residual));
        }
        let loss = residual_sq / total_elems as f64;
        if !loss.is_finite() {
            return Err(PriorError::TrainingFailure {
                step,
                what: format!("non-finite loss {loss}"),
            });
        }
        losses.push(loss);

        let grad_scale = 2.0 / total_elems as f32;
        for (cache, mut residual) in passes {
            residual.mapv_inplace(|r| r * grad_scale);
            net.backward(&cache, &residual);
        }
        let mut params = net.params_mut();
        adam.step(&mut params);
        ema.update(&params, step);
    }

    Ok(TrainReport {
        checkpoint: Checkpoint {
            config,
            schedule: schedule.clone(),
            step: tcfg.steps,
            init_seed: tcfg.seed,
            model: net,
            ema: ema.values,
        },
        losses,
    })
}
