//! Stage building blocks shared by the commands and the sweep.

use conceptmark_core::attribution::{evaluate_encrypted, evaluate_heldout, Attributor, EvalReport, HeldoutProtocol};
use conceptmark_core::codec::{psnr, CarrierBank, DualBank, Secret, SecretDecoder};
use conceptmark_core::concepts::{
    assign_secrets, build_dual_dataset, build_encrypted_dataset, ConceptRegistry, Dataset, DatasetConfig, DualLayout, Entry,
};
use conceptmark_core::diffusion::{
    training_samples, Denoiser, DenoiserConfig, IdentityCodec, IterationLog, LatentCodec, NoiseSchedule, Objective,
    PatchAutoencoder, ReverseMode, TrainConfig, Trainer,
};
use conceptmark_core::parallel::Exec;

use crate::config::RunConfig;
use crate::error::CliResult;

/// Media registry and, for dual runs, the content registry.
pub struct Registries {
    pub media: ConceptRegistry,
    pub content: Option<ConceptRegistry>,
}

impl Registries {
    pub fn generate(cfg: &RunConfig) -> CliResult<Self> {
        let seeds = cfg.seeds();
        let media = assign_secrets(cfg.concepts.count, cfg.codec.bits, seeds.registry)?;
        let content = if cfg.concepts.dual {
            Some(assign_secrets(cfg.concepts.content_count, cfg.codec.bits, seeds.content_registry)?)
        } else {
            None
        };
        Ok(Registries { media, content })
    }

    pub fn attributor<'a>(&'a self, decoder: &'a SecretDecoder) -> CliResult<Attributor<'a>> {
        Ok(match &self.content {
            Some(c) => Attributor::dual(decoder, &self.media, c)?,
            None => Attributor::single(decoder, &self.media)?,
        })
    }

    pub fn secrets_for(&self, entry: &Entry) -> Vec<Secret> {
        let mut v = vec![self.media.secret(entry.concept).clone()];
        if let (Some(c), Some(second)) = (&self.content, entry.second) {
            v.push(c.secret(second).clone());
        }
        v
    }
}

pub fn generate_bank(cfg: &RunConfig, exec: Exec) -> CliResult<CarrierBank> {
    Ok(CarrierBank::build_with(exec, cfg.seeds().bank, cfg.codec.bits, cfg.shape()?)?)
}

pub fn decoder(cfg: &RunConfig, bank: &CarrierBank) -> CliResult<SecretDecoder> {
    Ok(if cfg.concepts.dual {
        SecretDecoder::Dual(DualBank::new(bank, cfg.shape()?, cfg.split()?)?)
    } else {
        SecretDecoder::Single(bank.clone())
    })
}

pub fn dataset_config(cfg: &RunConfig) -> CliResult<DatasetConfig> {
    let mut d = DatasetConfig::new(cfg.concepts.per_concept, cfg.shape()?, cfg.codec.strength);
    d.holdout_fraction = cfg.concepts.holdout_fraction;
    d.image_seed = cfg.seeds().images;
    Ok(d)
}

pub fn build_dataset(cfg: &RunConfig, bank: &CarrierBank, regs: &Registries) -> CliResult<Dataset> {
    let dcfg = dataset_config(cfg)?;
    Ok(match &regs.content {
        Some(content) => {
            let layout = DualLayout { content, split: cfg.split()? };
            build_dual_dataset(&regs.media, layout, bank, &dcfg)?
        }
        None => build_encrypted_dataset(&regs.media, bank, &dcfg)?,
    })
}

/// Mean PSNR of encrypted against clean images over the whole dataset.
pub fn mean_psnr(dataset: &Dataset) -> CliResult<f64> {
    let mut total = 0.0;
    for e in &dataset.entries {
        total += psnr(&e.clean, &e.encrypted)?;
    }
    Ok(total / dataset.entries.len() as f64)
}

/// Fits the patch autoencoder when the config asks for one. It is fitted to
/// the encrypted training images and stays frozen afterwards.
pub fn fit_autoencoder(cfg: &RunConfig, dataset: &Dataset) -> CliResult<Option<PatchAutoencoder>> {
    if cfg.diffusion.latent != "patch" {
        return Ok(None);
    }
    let imgs: Vec<_> = dataset.train().map(|e| e.encrypted.clone()).collect();
    Ok(Some(PatchAutoencoder::fit(&imgs, cfg.diffusion.patch, cfg.diffusion.latent_channels)?))
}

pub fn fit_codec(cfg: &RunConfig, dataset: &Dataset) -> CliResult<Box<dyn LatentCodec>> {
    Ok(match fit_autoencoder(cfg, dataset)? {
        Some(ae) => Box::new(ae),
        None => Box::new(IdentityCodec),
    })
}

pub fn denoiser_config(cfg: &RunConfig, codec: &dyn LatentCodec) -> CliResult<DenoiserConfig> {
    let d = &cfg.diffusion;
    let mut m = DenoiserConfig::new(codec.latent_shape(cfg.shape()?)?);
    m.hidden = d.hidden;
    m.conv_layers = d.conv_layers;
    m.embed_dim = d.embed_dim;
    m.global_hidden = d.global_hidden;
    m.classes = if cfg.train.conditional { cfg.concepts.count } else { 0 };
    Ok(m)
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    let t = &cfg.train;
    TrainConfig {
        alpha_bce: t.alpha_bce,
        learning_rate: t.learning_rate,
        batch_size: t.batch_size,
        iterations: t.iterations,
        strength: cfg.codec.strength,
        conditional: t.conditional,
        seed: cfg.seeds().train,
    }
}

/// Trains a fresh denoiser on the training partition.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    cfg: &RunConfig,
    exec: Exec,
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    codec: &dyn LatentCodec,
    decoder: &SecretDecoder,
    regs: &Registries,
    on_iteration: impl FnMut(&IterationLog),
) -> CliResult<(Denoiser, Vec<IterationLog>)> {
    let samples = training_samples(exec, dataset, codec, cfg.train.conditional, |e| regs.secrets_for(e))?;
    let model = Denoiser::new(denoiser_config(cfg, codec)?, cfg.seeds().model)?;
    let objective = Objective { schedule, codec, decoder, alpha_bce: cfg.train.alpha_bce };
    let mut trainer = Trainer::new(model, objective, samples, train_config(cfg), exec)?;
    let logs = trainer.run(on_iteration)?;
    Ok((trainer.into_model(), logs))
}

pub fn heldout_protocol(cfg: &RunConfig, conditional: bool) -> CliResult<HeldoutProtocol> {
    let seed = cfg.seeds().eval;
    let mode = if cfg.reverse_is_ancestral()? { ReverseMode::Ancestral { seed } } else { ReverseMode::Deterministic };
    Ok(HeldoutProtocol { t_min: cfg.eval.t_min, t_max: cfg.t_max(), seed, mode, conditional })
}

/// Accuracy, and PSNR of the encrypted images, for one configuration.
///
/// With `iterations == 0` the encrypted held-out images are attributed
/// directly; otherwise a model is trained and the held-out protocol is run.
pub fn evaluate_point(cfg: &RunConfig, exec: Exec, iterations: usize) -> CliResult<(EvalReport, f64)> {
    let bank = generate_bank(cfg, exec)?;
    let regs = Registries::generate(cfg)?;
    let dec = decoder(cfg, &bank)?;
    let dataset = build_dataset(cfg, &bank, &regs)?;
    let at = regs.attributor(&dec)?;
    let report = if iterations == 0 {
        evaluate_encrypted(exec, &dataset, &at)?
    } else {
        let mut c = cfg.clone();
        c.train.iterations = iterations;
        let schedule = c.schedule()?;
        let codec = fit_codec(&c, &dataset)?;
        let (model, _) = train_model(&c, exec, &dataset, &schedule, codec.as_ref(), &dec, &regs, |_| {})?;
        let proto = heldout_protocol(&c, c.train.conditional)?;
        evaluate_heldout(exec, &model, &schedule, codec.as_ref(), &dataset, &at, proto)?
    };
    Ok((report, mean_psnr(&dataset)?))
}
