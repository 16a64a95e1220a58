//! Toy conditional latent-video diffusion model.

pub mod checkpoint;
pub mod denoiser;
pub mod process;
pub mod schedule;
pub mod train;

pub use checkpoint::Checkpoint;
pub use denoiser::{time_embedding, Condition, Denoiser, DenoiserArch, LatentShape, NoisePredictor};
pub use process::{
    ancestral_sample, base_loss, ddim_sample, ddim_timesteps, forward_noise, invert_noise, NoiseDraw,
};
pub use schedule::{DiffusionSchedule, ScheduleConfig};
pub use train::{train_base, BaseTrainConfig};
