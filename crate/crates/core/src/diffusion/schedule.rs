use crate::error::{ensure, Result};
use crate::image::Image;

/// Default number of diffusion steps.
pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Fixed forward-noising Markov chain.
///
/// Steps are numbered `1..=T`; `alpha_bar(0)` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        ensure!(steps >= 1, InvalidArgument, "schedule needs at least one step");
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        ensure!(!betas.is_empty(), InvalidArgument, "schedule needs at least one step");
        ensure!(
            betas.iter().all(|b| *b > 0.0 && *b < 1.0),
            InvalidArgument,
            "every beta must lie strictly inside (0, 1)"
        );
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        ensure!(
            (1..=self.steps()).contains(&t),
            InvalidArgument,
            "step {t} outside 1..={}",
            self.steps()
        );
        Ok(())
    }

    /// `z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`
    pub fn q_sample(&self, z0: &Image, t: usize, eps: &Image) -> Result<Image> {
        self.check_step(t)?;
        ensure!(
            z0.shape() == eps.shape(),
            ShapeMismatch,
            "noise {} does not match latent {}",
            eps.shape(),
            z0.shape()
        );
        let ab = self.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + s * e).collect();
        Image::from_vec(z0.shape(), data)
    }

    /// Closed-form clean-latent estimate from predicted noise.
    pub fn x0_estimate(&self, z_t: &Image, eps_hat: &Image, t: usize) -> Result<Image> {
        self.check_step(t)?;
        ensure!(
            z_t.shape() == eps_hat.shape(),
            ShapeMismatch,
            "prediction {} does not match latent {}",
            eps_hat.shape(),
            z_t.shape()
        );
        let ab = self.alpha_bar(t);
        let (inv, s) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
        let data = z_t.data().iter().zip(eps_hat.data()).map(|(z, e)| (z - s * e) * inv).collect();
        Image::from_vec(z_t.shape(), data)
    }

    /// Variance of the ancestral reverse step `t -> t-1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        self.beta(t) * (1.0 - ab_prev) / (1.0 - ab)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}
