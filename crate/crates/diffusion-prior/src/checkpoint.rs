//! Checkpoint directory layout: `meta.json` (config, schedule constants,
//! step count, init seed) plus `params.bin` and `ema.bin` blobs. Blobs are
//! magic `CPRM1\0`, u32 tensor count, then per tensor a u32 rank, u32 dims,
//! and f32 little-endian data, in the model's canonical parameter order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use volume_core::io::Cursor;


use crate::model::{DenoiserConfig, EvalDenoiser};
use crate::nn::unet::UNet;
use crate::schedule::NoiseSchedule;
use crate::{PriorError, Result};

pub const PARAM_MAGIC: &[u8; 6] = b"CPRM1\0";

/// A trained denoiser: raw and EMA parameters plus everything needed to
/// rebuild the network and its noise schedule.
pub struct Checkpoint {
    pub config: DenoiserConfig,
    pub schedule: NoiseSchedule,
    pub step: u64,
    pub init_seed: u64,
    pub model: UNet,
    pub ema: Vec<ArrayD<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: DenoiserConfig,
    schedule: NoiseSchedule,
    step: u64,
    init_seed: u64,
}

fn write_blob(path: &Path, tensors: &[ArrayD<f32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PARAM_MAGIC)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for t in tensors {
        w.write_u32::<LittleEndian>(t.ndim() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in t.iter() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_blob(path: &Path) -> Result<Vec<ArrayD<f32>>> {
    let buf = std::fs::read(path)?;
    let mut cur = Cursor::new(&buf);
    cur.expect_magic(PARAM_MAGIC, "CPRM1")
        .map_err(PriorError::Volume)?;
    let count = cur.read_u32("tensor count").map_err(PriorError::Volume)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = cur.read_u32("rank").map_err(PriorError::Volume)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.read_u32("dim").map_err(PriorError::Volume)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(cur.read_f32("value").map_err(PriorError::Volume)?);
        }
        out.push(
            ArrayD::from_shape_vec(shape, data)
                .map_err(|e| PriorError::Checkpoint(format!("bad tensor shape: {e}")))?,
        );
    }
    Ok(out)
}

impl Checkpoint {
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = Meta {
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            step: self.step,
            init_seed: self.init_seed,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        let raw: Vec<ArrayD<f32>> = self.model.params_mut().iter().map(|p| p.w.clone()).collect();
        write_blob(&dir.join("params.bin"), &raw)?;
        write_blob(&dir.join("ema.bin"), &self.ema)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let mut schedule = meta.schedule;
        schedule.rebuild()?;
        let mut model = UNet::new(&meta.config.unet_config(), meta.init_seed);
        let raw = read_blob(&dir.join("params.bin"))?;
        let ema = read_blob(&dir.join("ema.bin"))?;
        {
            let params = model.params_mut();
            if params.len() != raw.len() || params.len() != ema.len() {
                return Err(PriorError::Checkpoint(format!(
                    "parameter count mismatch: model {}, blobs {}/{}",
                    params.len(),
                    raw.len(),
                    ema.len()
                )));
            }
            for (p, t) in params.into_iter().zip(raw.into_iter()) {
                if p.w.shape() != t.shape() {
                    return Err(PriorError::Checkpoint(format!(
                        "tensor shape mismatch: {:?} vs {:?}",
                        p.w.shape(),
                        t.shape()
                    )));
                }
                p.w = t;
            }
        }
        Ok(Self {
            config: meta.config,
            schedule,
            step: meta.step,
            init_seed: meta.init_seed,
            model,
            ema,
        })
    }

    /// Inference model carrying the EMA parameters.
    pub fn eval_denoiser(&self) -> EvalDenoiser {
        let mut net = UNet::new(&self.config.unet_config(), self.init_seed);
        {
            let params = net.params_mut();
            assert_eq!(params.len(), self.ema.len(), "EMA aligned with params");
            for (p, e) in params.into_iter().zip(self.ema.iter()) {
                p.w = e.clone();
            }
        }
        EvalDenoiser::new(net, self.config.clone(), self.schedule.t_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{extract_slices, SliceSource};
    use crate::schedule::build_schedule;
    use crate::train::{train, TrainConfig};
    use volume_core::{generate_phantom, Plane};

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let vols = vec![generate_phantom(1, (8, 8, 8), 4).unwrap()];
        let data = extract_slices(&vols, &[Plane::Axial]).unwrap();
        let schedule = build_schedule(100, 0.001, 0.02).unwrap();
        let mut config = DenoiserConfig::small();
        config.base_channels = 8;
        config.channel_mults = vec![1, 2];
        config.attention_levels = vec![1];
        let tcfg = TrainConfig {
            steps: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut report = train(&config, &SliceSource::Static(data), &schedule, &tcfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        report.checkpoint.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();

        let x = crate::nn::Tensor4::from_shape_fn((2, 2, 8, 8), |(n, c, i, j)| {
            ((n * 3 + c * 7 + i + j) as f32 * 0.11).sin()
        });
        let a = report.checkpoint.eval_denoiser().predict(&x, &[5, 60]).unwrap();
        let b = loaded.eval_denoiser().predict(&x, &[5, 60]).unwrap();
        assert_eq!(a, b);
        assert_eq!(loaded.step, 5);
        assert_eq!(loaded.schedule.t_max, 100);
        assert!(!loaded.schedule.sigma.is_empty(), "tables rebuilt");
    }
}
