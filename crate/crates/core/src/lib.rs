//! Concept-keyed watermarking for causal attribution of diffusion-model outputs.
//!
//! Training images of each concept carry that concept's spread-spectrum
//! watermark. A small diffusion model is trained on the encrypted images with
//! a denoising loss plus a bit-recovery loss, so that the watermark of the
//! influencing concept reappears in what it generates. Attribution decodes the
//! bits of an image and picks the concept whose secret agrees best.
//!
//! Modules:
//! - [`codec`]: carriers, secrets, embedding and decoding.
//! - [`concepts`]: codebooks and procedural concept datasets.
//! - [`diffusion`]: noise schedule, denoiser, training and sampling.
//! - [`attribution`]: bit agreement, concept selection and evaluation protocols.
//! - [`robustness`]: image degradations and per-attack accuracy.
//! - [`baseline`]: feature-correlation attribution for comparison.

pub mod attribution;
pub mod baseline;
pub mod codec;
pub mod concepts;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod num;
pub mod parallel;
pub mod robustness;

pub use error::{Error, Result};
pub use image::{Image, Shape};
