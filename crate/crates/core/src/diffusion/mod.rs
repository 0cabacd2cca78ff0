//! Toy denoising diffusion model trained on encrypted images.
//!
//! The denoiser works in the latent space of a [`LatentCodec`]; the default
//! codec is the identity, so latents are pixels.

pub mod checkpoint;
pub mod latent;
pub mod model;
pub mod nn;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use latent::{IdentityCodec, LatentCodec, PatchAutoencoder};
pub use model::{Denoiser, DenoiserConfig, NoisePredictor};
pub use sampler::{denoise_from, sample, ReverseMode};
pub use schedule::NoiseSchedule;
pub use train::{
    loss_bce, loss_ldm, trailing_mean, training_samples, Adam, IterationLog, LossBreakdown, NoiseDraw, Objective,
    TrainConfig, TrainSample, Trainer,
};
