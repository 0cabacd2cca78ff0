//! End-to-end evaluation protocols.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{Secret, SecretDecoder};
use crate::concepts::{entry_path, ConceptId, ConceptRegistry, Dataset, Entry};
use crate::diffusion::{denoise_from, sample, LatentCodec, NoisePredictor, NoiseSchedule, ReverseMode};
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::parallel::{self, Exec};

use super::report::{EvalRecord, EvalReport};
use super::score::{agreement, attribute, AttributionResult};

/// A decoder paired with one registry per decoded watermark.
#[derive(Clone, Copy)]
pub struct Attributor<'a> {
    decoder: &'a SecretDecoder,
    registries: [Option<&'a ConceptRegistry>; 2],
}

impl<'a> Attributor<'a> {
    pub fn single(decoder: &'a SecretDecoder, registry: &'a ConceptRegistry) -> Result<Self> {
        ensure!(decoder.arity() == 1, InvalidArgument, "single attribution needs a single-bank decoder");
        Ok(Attributor { decoder, registries: [Some(registry), None] })
    }

    pub fn dual(decoder: &'a SecretDecoder, media: &'a ConceptRegistry, content: &'a ConceptRegistry) -> Result<Self> {
        ensure!(decoder.arity() == 2, InvalidArgument, "dual attribution needs a dual-bank decoder");
        Ok(Attributor { decoder, registries: [Some(media), Some(content)] })
    }

    pub fn decoder(&self) -> &SecretDecoder {
        self.decoder
    }

    pub fn bits(&self) -> usize {
        self.decoder.bank().bits()
    }

    fn registry(&self, head: usize) -> &ConceptRegistry {
        self.registries[head].expect("head within arity")
    }

    pub fn attribute(&self, image: &Image) -> Result<(Vec<Secret>, Vec<AttributionResult>)> {
        let decoded = self.decoder.decode_hard(image)?;
        let results = decoded
            .iter()
            .enumerate()
            .map(|(h, s)| attribute(s, self.registry(h)))
            .collect::<Result<_>>()?;
        Ok((decoded, results))
    }

    /// Attributes `image` and scores the decoded bits against `truth`.
    pub fn record(&self, label: String, truth: Vec<ConceptId>, image: &Image) -> Result<EvalRecord> {
        let (decoded, results) = self.attribute(image)?;
        let true_agreement = truth
            .iter()
            .zip(&decoded)
            .enumerate()
            .map(|(h, (t, s))| agreement(s, self.registry(h).secret(*t)))
            .collect::<Result<_>>()?;
        Ok(EvalRecord { label, truth, results, true_agreement })
    }
}

/// Ground-truth concepts of a dataset entry, one per watermark.
pub fn entry_truth(entry: &Entry) -> Vec<ConceptId> {
    let mut t = vec![entry.concept];
    t.extend(entry.second);
    t
}

fn held_out(dataset: &Dataset) -> Result<Vec<(usize, &Entry)>> {
    let v: Vec<_> = dataset
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.partition == crate::concepts::Partition::HeldOut)
        .collect();
    ensure!(!v.is_empty(), InvalidArgument, "dataset has no held-out entries");
    Ok(v)
}

/// Attributes labelled images directly.
pub fn evaluate_images(exec: Exec, items: &[(String, Vec<ConceptId>, Image)], attributor: &Attributor) -> Result<EvalReport> {
    let recs = parallel::map_slice(exec, items, |(label, truth, img)| attributor.record(label.clone(), truth.clone(), img))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(attributor.bits(), recs))
}

/// Codec-only evaluation: attributes the encrypted held-out images as stored.
pub fn evaluate_encrypted(exec: Exec, dataset: &Dataset, attributor: &Attributor) -> Result<EvalReport> {
    let entries = held_out(dataset)?;
    let recs = parallel::map_slice(exec, &entries, |(i, e)| {
        attributor.record(entry_path(dataset.shape, *i), entry_truth(e), &e.encrypted)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(attributor.bits(), recs))
}

/// Settings of the noise-then-denoise held-out protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeldoutProtocol {
    /// Inclusive step range the forward noising is drawn from.
    pub t_min: usize,
    pub t_max: usize,
    pub seed: u64,
    pub mode: ReverseMode,
    /// Feed the entry's concept as class label.
    pub conditional: bool,
}

impl HeldoutProtocol {
    pub fn full_range(schedule: &NoiseSchedule, seed: u64) -> Self {
        HeldoutProtocol {
            t_min: 1,
            t_max: schedule.steps(),
            seed,
            mode: ReverseMode::Deterministic,
            conditional: false,
        }
    }
}

/// Noises each held-out latent to a random step, denoises it back and
/// attributes the result.
pub fn evaluate_heldout(
    exec: Exec,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    dataset: &Dataset,
    attributor: &Attributor,
    protocol: HeldoutProtocol,
) -> Result<EvalReport> {
    ensure!(
        1 <= protocol.t_min && protocol.t_min <= protocol.t_max && protocol.t_max <= schedule.steps(),
        InvalidArgument,
        "step range {}..={} outside 1..={}",
        protocol.t_min,
        protocol.t_max,
        schedule.steps()
    );
    let entries = held_out(dataset)?;
    let recs = parallel::map_slice(exec, &entries, |(i, e)| {
        let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed ^ (*i as u64).wrapping_mul(0xD129_0F3B_8C5E_A247));
        let t = rng.random_range(protocol.t_min..=protocol.t_max);
        let z0 = codec.encode(&e.encrypted)?;
        let noise: Vec<f64> = (0..z0.shape().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z_t = schedule.q_sample(&z0, t, &Image::from_vec(z0.shape(), noise)?)?;
        let mode = match protocol.mode {
            ReverseMode::Ancestral { seed } => ReverseMode::Ancestral { seed: seed ^ *i as u64 },
            m => m,
        };
        let class = protocol.conditional.then_some(e.concept.0);
        let z_hat = denoise_from(model, schedule, &z_t, t, class, mode)?;
        let x = codec.decode(&z_hat)?.clipped();
        attributor.record(entry_path(dataset.shape, *i), entry_truth(e), &x)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(attributor.bits(), recs))
}

/// Samples fresh images and attributes them.
///
/// Conditional mode draws `per_class` images for every class and scores the
/// attribution against the class. Unconditional mode draws
/// `classes · per_class` images with no ground truth; the report then holds
/// the predicted-concept distribution and the null rate.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_sampled(
    exec: Exec,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    attributor: &Attributor,
    classes: usize,
    per_class: usize,
    conditional: bool,
    seed: u64,
) -> Result<EvalReport> {
    sample_attributed(exec, model, schedule, codec, attributor, classes, per_class, conditional, seed).map(|(_, r)| r)
}

/// [`evaluate_sampled`] that also returns the images, in record order.
#[allow(clippy::too_many_arguments)]
pub fn sample_attributed(
    exec: Exec,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    attributor: &Attributor,
    classes: usize,
    per_class: usize,
    conditional: bool,
    seed: u64,
) -> Result<(Vec<Image>, EvalReport)> {
    ensure!(classes >= 1 && per_class >= 1, InvalidArgument, "need at least one class and one image per class");
    let mut recs = Vec::with_capacity(classes * per_class);
    let mut images = Vec::with_capacity(classes * per_class);
    if conditional {
        for c in 0..classes {
            let imgs = sample(exec, model, schedule, codec, per_class, Some(c), seed.wrapping_add(c as u64 * 1_000_003))?;
            for (k, img) in imgs.into_iter().enumerate() {
                recs.push(attributor.record(format!("sample/{c}/{k}"), vec![ConceptId(c)], &img)?);
                images.push(img);
            }
        }
    } else {
        let imgs = sample(exec, model, schedule, codec, classes * per_class, None, seed)?;
        for (k, img) in imgs.into_iter().enumerate() {
            recs.push(attributor.record(format!("sample/{k}"), Vec::new(), &img)?);
            images.push(img);
        }
    }
    Ok((images, EvalReport::from_records(attributor.bits(), recs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CarrierBank;
    use crate::concepts::{assign_secrets, build_encrypted_dataset, DatasetConfig};
    use crate::diffusion::IdentityCodec;
    use crate::image::Shape;

    /// Predicts zero noise, so one reverse step only rescales the latent.
    struct Passthrough {
        shape: Shape,
    }

    impl NoisePredictor for Passthrough {
        fn latent_shape(&self) -> Shape {
            self.shape
        }

        fn predict(&self, z_t: &Image, _t: usize, _class: Option<usize>) -> Result<Image> {
            Ok(Image::zeros(z_t.shape()))
        }
    }

    #[test]
    fn identity_denoiser_at_first_step_recovers_every_concept() {
        let shape = Shape::new(32, 32, 3);
        let bank = CarrierBank::build(2, 160, shape).unwrap();
        let reg = assign_secrets(8, 160, 2).unwrap();
        let ds = build_encrypted_dataset(&reg, &bank, &DatasetConfig::new(20, shape, 0.3)).unwrap();
        let dec = SecretDecoder::Single(bank);
        let at = Attributor::single(&dec, &reg).unwrap();
        let schedule = NoiseSchedule::default();
        let proto = HeldoutProtocol { t_min: 1, t_max: 1, ..HeldoutProtocol::full_range(&schedule, 4) };
        let rep = evaluate_heldout(Exec::default(), &Passthrough { shape }, &schedule, &IdentityCodec, &ds, &at, proto).unwrap();
        assert_eq!(rep.len(), 16);
        assert_eq!(rep.accuracy(), 1.0);
        let direct = evaluate_encrypted(Exec::default(), &ds, &at).unwrap();
        assert_eq!(direct.accuracy(), 1.0);
        let again = evaluate_heldout(Exec::Sequential, &Passthrough { shape }, &schedule, &IdentityCodec, &ds, &at, proto).unwrap();
        assert_eq!(rep.to_text(), again.to_text());
    }

    #[test]
    fn untrained_sampler_output_is_mostly_null() {
        let shape = Shape::new(16, 16, 3);
        let bank = CarrierBank::build(2, 160, shape).unwrap();
        let reg = assign_secrets(4, 160, 2).unwrap();
        let dec = SecretDecoder::Single(bank);
        let at = Attributor::single(&dec, &reg).unwrap();
        let schedule = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
        let mut cfg = crate::diffusion::DenoiserConfig::new(shape);
        cfg.hidden = 4;
        cfg.classes = 4;
        let model = crate::diffusion::Denoiser::new(cfg, 5).unwrap();
        let rep = evaluate_sampled(Exec::default(), &model, &schedule, &IdentityCodec, &at, 4, 5, true, 1).unwrap();
        assert_eq!(rep.len(), 20);
        let counted: usize = rep.heads[0].per_concept.values().map(|(_, n)| n).sum();
        assert_eq!(counted, 20);
        assert!(rep.null_rate() >= 0.9, "{}", rep.null_rate());
        let unc = evaluate_sampled(Exec::default(), &model, &schedule, &IdentityCodec, &at, 4, 5, false, 1).unwrap();
        assert_eq!(unc.heads[0].predicted.values().sum::<usize>(), 20);
    }
}
