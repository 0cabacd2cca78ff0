use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::image::Image;
use crate::parallel::{self, Exec};

use super::latent::LatentCodec;
use super::model::NoisePredictor;
use super::schedule::NoiseSchedule;

/// How each reverse step treats its randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseMode {
    /// Noise-free DDIM update; reproducible.
    Deterministic,
    /// DDPM ancestral update with posterior noise from a seeded stream.
    Ancestral { seed: u64 },
}

/// Runs the reverse chain from `z_t` at step `t` down to step 0.
pub fn denoise_from(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z_t: &Image,
    t: usize,
    class: Option<usize>,
    mode: ReverseMode,
) -> Result<Image> {
    schedule.check_step(t)?;
    let mut rng = match mode {
        ReverseMode::Ancestral { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        ReverseMode::Deterministic => None,
    };
    let mut z = z_t.clone();
    for s in (1..=t).rev() {
        let eps = model.predict(&z, s, class)?;
        z = match rng.as_mut() {
            None => {
                let x0 = schedule.x0_estimate(&z, &eps, s)?;
                let ab_prev = schedule.alpha_bar(s - 1);
                let (a, b) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
                let data = x0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
                Image::from_vec(z.shape(), data)?
            }
            Some(rng) => {
                let alpha = schedule.alpha(s);
                let coef = schedule.beta(s) / (1.0 - schedule.alpha_bar(s)).sqrt();
                let inv = 1.0 / alpha.sqrt();
                let sigma = schedule.posterior_variance(s).sqrt();
                let data = z
                    .data()
                    .iter()
                    .zip(eps.data())
                    .map(|(zv, e)| {
                        let mu = inv * (zv - coef * e);
                        if s > 1 {
                            let xi: f64 = StandardNormal.sample(rng);
                            mu + sigma * xi
                        } else {
                            mu
                        }
                    })
                    .collect();
                Image::from_vec(z.shape(), data)?
            }
        };
    }
    Ok(z)
}

/// Draws `count` images by ancestral sampling from pure noise.
///
/// Image `i` uses its own stream derived from `seed`, so results are
/// independent of execution order.
pub fn sample(
    exec: Exec,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    count: usize,
    class: Option<usize>,
    seed: u64,
) -> Result<Vec<Image>> {
    let shape = model.latent_shape();
    let t = schedule.steps();
    parallel::map_range(exec, count, |i| {
        let stream = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let noise: Vec<f64> = (0..shape.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z_t = Image::from_vec(shape, noise)?;
        let z0 = denoise_from(model, schedule, &z_t, t, class, ReverseMode::Ancestral { seed: stream.wrapping_add(1) })?;
        Ok(codec.decode(&z0)?.clipped())
    })
    .into_iter()
    .collect()
}
