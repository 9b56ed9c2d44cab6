//! DDPM noise schedule, the 2D complex-slice denoiser (plain and
//! depthwise-kernel variants), slice dataset construction, diverse-resolution
//! augmentation, training, and checkpointing.

mod checkpoint;
pub mod dataset;
mod error;
pub mod model;
pub mod nn;
mod schedule;
pub mod train;

pub use checkpoint::Checkpoint;
pub use dataset::{
    augment_diverse, extract_slices, from_two_channel, magnitude_std, normalize_volume,
    to_two_channel, Slice2D, SliceDataset, SliceSource,
};
pub use error::PriorError;
pub use model::{
    batch_from_slices, denoise_eps, Arch, DenoiserConfig, EpsModel, EvalDenoiser, IN_CHANNELS,
};
pub use schedule::{build_schedule, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_T};
pub use train::{ddpm_loss, train, Adam, Ema, TrainConfig, TrainReport};

pub type Result<T> = std::result::Result<T, PriorError>;
