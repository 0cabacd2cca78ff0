//! Training objective and optimizer loop.
//!
//! The loss per sample is the noise-prediction MSE plus `α` times the
//! binary cross-entropy between the concept secret and the soft bits decoded
//! from the clean-image estimate `D(ẑ)`, where
//! `ẑ = (z_t − sqrt(1−ab_t)·ε̂) / sqrt(ab_t)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{SecretDecoder, Secret};
use crate::concepts::{Dataset, Partition};
use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::parallel::{self, Exec};

use super::latent::LatentCodec;
use super::model::Denoiser;
use super::schedule::NoiseSchedule;

/// Soft bits are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` before the logarithm.
pub const BCE_CLAMP: f64 = 1e-7;
pub const DEFAULT_ALPHA_BCE: f64 = 2.0;
/// Base rate 3.2e-5 scaled by ten for the small network.
pub const DEFAULT_LEARNING_RATE: f64 = 3.2e-4;

pub fn loss_ldm(eps_hat: &Image, eps: &Image) -> Result<f64> {
    ensure!(
        eps_hat.shape() == eps.shape(),
        ShapeMismatch,
        "prediction {} vs noise {}",
        eps_hat.shape(),
        eps.shape()
    );
    let n = eps.data().len() as f64;
    Ok(eps_hat.data().iter().zip(eps.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

pub fn loss_bce(secret: &Secret, soft: &[f64]) -> Result<f64> {
    ensure!(
        secret.len() == soft.len(),
        ShapeMismatch,
        "{}-bit secret against {} soft bits",
        secret.len(),
        soft.len()
    );
    let b = soft.len() as f64;
    let total: f64 = secret
        .bits()
        .zip(soft)
        .map(|(bit, &q)| {
            let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if bit {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum();
    Ok(total / b)
}

/// `∂ loss_bce / ∂ soft`; zero where the clamp is active.
pub fn loss_bce_grad(secret: &Secret, soft: &[f64]) -> Vec<f64> {
    let b = soft.len() as f64;
    secret
        .bits()
        .zip(soft)
        .map(|(bit, &q)| {
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&q) {
                0.0
            } else if bit {
                -1.0 / (q * b)
            } else {
                1.0 / ((1.0 - q) * b)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub ldm: f64,
    pub bce: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.ldm.is_finite() && self.bce.is_finite() && self.total.is_finite()
    }
}

/// One training pair: an encrypted image already encoded to latent space.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub latent: Image,
    /// One secret, or two for dual-watermarked images.
    pub secrets: Vec<Secret>,
    pub class: Option<usize>,
    /// Position of the source entry in its dataset.
    pub index: usize,
}

/// Encodes the training partition of `dataset`.
///
/// `secrets_for` returns the secrets of an entry; with `conditional` set the
/// entry's concept becomes its class label.
pub fn training_samples(
    exec: Exec,
    dataset: &Dataset,
    codec: &dyn LatentCodec,
    conditional: bool,
    secrets_for: impl Fn(&crate::concepts::Entry) -> Vec<Secret> + Sync + Send,
) -> Result<Vec<TrainSample>> {
    let picked: Vec<(usize, &crate::concepts::Entry)> = dataset
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.partition == Partition::Train)
        .collect();
    ensure!(!picked.is_empty(), InvalidArgument, "dataset has no training entries");
    parallel::map_slice(exec, &picked, |(i, e)| {
        Ok(TrainSample {
            latent: codec.encode(&e.encrypted)?,
            secrets: secrets_for(e),
            class: conditional.then_some(e.concept.0),
            index: *i,
        })
    })
    .into_iter()
    .collect()
}

/// Fixed randomness for one sample of one step.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Image,
}

/// Everything the objective needs besides the parameters.
#[derive(Clone, Copy)]
pub struct Objective<'a> {
    pub schedule: &'a NoiseSchedule,
    pub codec: &'a dyn LatentCodec,
    pub decoder: &'a SecretDecoder,
    pub alpha_bce: f64,
}

impl Objective<'_> {
    /// Loss of one sample and its gradient with respect to the model output.
    fn sample_terms(
        &self,
        model: &Denoiser,
        sample: &TrainSample,
        draw: &NoiseDraw,
    ) -> Result<(LossBreakdown, super::model::ForwardCache, Image)> {
        let t = draw.t;
        let z_t = self.schedule.q_sample(&sample.latent, t, &draw.eps)?;
        let (eps_hat, cache) = model.forward(&z_t, t, sample.class)?;
        let ldm = loss_ldm(&eps_hat, &draw.eps)?;
        let n = eps_hat.data().len() as f64;
        let mut grad: Vec<f64> = eps_hat.data().iter().zip(draw.eps.data()).map(|(a, b)| 2.0 * (a - b) / n).collect();

        let z_hat = self.schedule.x0_estimate(&z_t, &eps_hat, t)?;
        let x_hat = self.codec.decode(&z_hat)?;
        let soft = self.decoder.decode_soft(&x_hat)?;
        ensure!(
            soft.len() == sample.secrets.len(),
            ShapeMismatch,
            "sample {} carries {} secrets, decoder yields {}",
            sample.index,
            sample.secrets.len(),
            soft.len()
        );
        let mut bce = 0.0;
        for (s, q) in sample.secrets.iter().zip(&soft) {
            bce += loss_bce(s, q)?;
        }
        if self.alpha_bce > 0.0 {
            let g_soft: Vec<Vec<f64>> = sample
                .secrets
                .iter()
                .zip(&soft)
                .map(|(s, q)| loss_bce_grad(s, q).into_iter().map(|g| g * self.alpha_bce).collect())
                .collect();
            let g_x = self.decoder.decode_soft_vjp(&x_hat, &g_soft)?;
            let g_z = self.codec.decode_vjp(&z_hat, &g_x)?;
            let ab = self.schedule.alpha_bar(t);
            let dz_deps = -((1.0 - ab) / ab).sqrt();
            for (g, d) in grad.iter_mut().zip(g_z.data()) {
                *g += d * dz_deps;
            }
        }
        let total = if self.alpha_bce > 0.0 { ldm + self.alpha_bce * bce } else { ldm };
        let loss = LossBreakdown { ldm, bce, total };
        Ok((loss, cache, Image::from_vec(eps_hat.shape(), grad)?))
    }

    pub fn sample_loss(&self, model: &Denoiser, sample: &TrainSample, draw: &NoiseDraw) -> Result<LossBreakdown> {
        Ok(self.sample_terms(model, sample, draw)?.0)
    }

    /// Batch-mean loss and parameter gradient.
    pub fn loss_and_gradient(
        &self,
        exec: Exec,
        model: &Denoiser,
        batch: &[&TrainSample],
        draws: &[NoiseDraw],
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        ensure!(!batch.is_empty(), InvalidArgument, "empty batch");
        ensure!(batch.len() == draws.len(), ShapeMismatch, "{} samples, {} noise draws", batch.len(), draws.len());
        let pairs: Vec<_> = batch.iter().zip(draws).collect();
        let per = parallel::map_slice(exec, &pairs, |(s, d)| -> Result<(LossBreakdown, Vec<f64>)> {
            let (loss, cache, g_out) = self.sample_terms(model, s, d)?;
            let mut g = vec![0.0; model.param_count()];
            model.backward(&cache, &g_out, &mut g)?;
            Ok((loss, g))
        });
        let scale = 1.0 / batch.len() as f64;
        let mut grads = vec![0.0; model.param_count()];
        let mut loss = LossBreakdown::default();
        for r in per {
            let (l, g) = r?;
            loss.ldm += l.ldm * scale;
            loss.bce += l.bce * scale;
            loss.total += l.total * scale;
            crate::num::axpy(scale, &g, &mut grads);
        }
        Ok((loss, grads))
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub alpha_bce: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Embedding strength the training images were encrypted with.
    pub strength: f64,
    pub conditional: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_bce: DEFAULT_ALPHA_BCE,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 16,
            iterations: 2000,
            strength: crate::codec::DEFAULT_STRENGTH,
            conditional: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha_bce >= 0.0 && self.alpha_bce.is_finite(),
            InvalidArgument,
            "alpha_bce must be a finite value >= 0, got {}",
            self.alpha_bce
        );
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            InvalidArgument,
            "learning rate must be positive"
        );
        ensure!(self.batch_size >= 1, InvalidArgument, "batch size must be positive");
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

impl IterationLog {
    pub const HEADER: &'static str = "iter,ldm,bce,total";
}

impl fmt::Display for IterationLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.6},{:.6},{:.6}", self.iteration, self.loss.ldm, self.loss.bce, self.loss.total)
    }
}

/// Owns the model and optimizer state for the duration of training.
pub struct Trainer<'a> {
    model: Denoiser,
    objective: Objective<'a>,
    samples: Vec<TrainSample>,
    cfg: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    iteration: usize,
    exec: Exec,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Denoiser,
        objective: Objective<'a>,
        samples: Vec<TrainSample>,
        cfg: TrainConfig,
        exec: Exec,
    ) -> Result<Self> {
        cfg.validate()?;
        ensure!(!samples.is_empty(), InvalidArgument, "no training samples");
        for s in &samples {
            ensure!(
                s.latent.shape() == model.config().latent,
                ShapeMismatch,
                "sample {} latent {} does not match model {}",
                s.index,
                s.latent.shape(),
                model.config().latent
            );
        }
        let adam = Adam::new(model.param_count(), cfg.learning_rate);
        Ok(Trainer {
            model,
            objective: Objective { alpha_bce: cfg.alpha_bce, ..objective },
            samples,
            cfg,
            adam,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            iteration: 0,
            exec,
        })
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn into_model(self) -> Denoiser {
        self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draws a batch, takes one optimizer step and returns the batch loss.
    pub fn step(&mut self) -> Result<IterationLog> {
        let steps = self.objective.schedule.steps();
        let shape = self.model.config().latent;
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        let mut draws = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let i = self.rng.random_range(0..self.samples.len());
            let t = self.rng.random_range(1..=steps);
            let eps: Vec<f64> = (0..shape.len()).map(|_| StandardNormal.sample(&mut self.rng)).collect();
            batch.push(&self.samples[i]);
            draws.push(NoiseDraw { t, eps: Image::from_vec(shape, eps)? });
        }
        self.iteration += 1;
        let (loss, grads) = self.objective.loss_and_gradient(self.exec, &self.model, &batch, &draws)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            let indices: Vec<usize> = batch.iter().map(|s| s.index).collect();
            return Err(Error::NonFinite(format!(
                "iteration {}: loss {:?} with dataset entries {:?}",
                self.iteration, loss, indices
            )));
        }
        self.adam.step(self.model.params_mut(), &grads);
        Ok(IterationLog { iteration: self.iteration, loss })
    }

    /// Runs the configured number of iterations, reporting each one.
    pub fn run(&mut self, mut on_iteration: impl FnMut(&IterationLog)) -> Result<Vec<IterationLog>> {
        let mut log = Vec::with_capacity(self.cfg.iterations);
        while self.iteration < self.cfg.iterations {
            let entry = self.step()?;
            on_iteration(&entry);
            log.push(entry);
        }
        Ok(log)
    }
}

/// Mean of `values[i - window + 1 ..= i]` for the last index.
pub fn trailing_mean(values: &[f64], window: usize) -> Option<f64> {
    if window == 0 || values.len() < window {
        return None;
    }
    Some(values[values.len() - window..].iter().sum::<f64>() / window as f64)
}
