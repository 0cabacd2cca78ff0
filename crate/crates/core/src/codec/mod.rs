//! Spread-spectrum watermark codec.
//!
//! A secret of `b` bits becomes an image-shaped pattern by summing `b`
//! pseudorandom carriers with signs taken from the bits. Decoding correlates
//! the mean-removed image with every carrier; the logistic of the scaled
//! correlation is a differentiable soft bit, which the diffusion trainer
//! uses for its bit-recovery loss.

pub mod bank;
pub mod decode;
pub mod embed;
pub mod metrics;
pub mod secret;

pub use bank::{CarrierBank, REFERENCE_STRENGTH};
pub use decode::{correlations, decode_batch, decode_hard, decode_soft, decode_soft_vjp, threshold, DualBank, SecretDecoder};
pub use embed::{
    embed, embed_dual, estimate_watermark_by_averaging, resize_watermark, watermark_from_secret, ClipMode,
    EmbedConfig, Split, SpatialWatermark, AVERAGING_IMAGES, DEFAULT_STRENGTH,
};
pub use metrics::{cosine, psnr};
pub use secret::{read_secrets, write_secrets, Secret};

/// Default secret length.
pub const DEFAULT_BITS: usize = 160;
