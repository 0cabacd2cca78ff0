//! Run configuration: one TOML file with a section per stage.
//!
//! Every struct rejects unknown keys. Missing keys take the defaults below,
//! and command-line flags are applied on top of the file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use conceptmark_core::codec::Split;
use conceptmark_core::diffusion::NoiseSchedule;
use conceptmark_core::robustness::{self, Degradation};
use conceptmark_core::Shape;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Every stage derives its own stream from it.
    pub seed: u64,
    /// Directory all artifacts and reports are written to.
    pub out: PathBuf,
    pub codec: CodecSection,
    pub concepts: ConceptSection,
    pub diffusion: DiffusionSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub bits: usize,
    /// Image geometry as `HxWxC`.
    pub shape: String,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConceptSection {
    pub count: usize,
    /// Content concepts of a dual run; the media concepts are `count`.
    pub content_count: usize,
    pub per_concept: usize,
    pub holdout_fraction: f64,
    pub dual: bool,
    /// `left-right` or `top-bottom`.
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// `identity` or `patch`.
    pub latent: String,
    pub patch: usize,
    pub latent_channels: usize,
    pub hidden: usize,
    pub conv_layers: usize,
    pub embed_dim: usize,
    pub global_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha_bce: f64,
    pub conditional: bool,
    /// Log every n-th iteration to the training log.
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub t_min: usize,
    /// Upper end of the held-out noising range; 0 means the last step.
    pub t_max: usize,
    /// `ddim` (deterministic) or `ddpm` (ancestral).
    pub reverse: String,
    pub samples_per_class: usize,
    /// Degradation list such as `jpeg:0.25,blur:0.5`; empty means every kind
    /// at `severity`.
    pub degrade: String,
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// `strength`, `concepts` or `per-concept`.
    pub kind: String,
    /// Sweep points; empty selects the default grid of the kind.
    pub values: Vec<f64>,
    /// Training iterations per point; 0 evaluates the encrypted images directly.
    pub iterations: usize,
    /// Emit a gnuplot script next to the table.
    pub plot: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            codec: CodecSection::default(),
            concepts: ConceptSection::default(),
            diffusion: DiffusionSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for CodecSection {
    fn default() -> Self {
        CodecSection { bits: 160, shape: "32x32x3".into(), strength: 0.3 }
    }
}

impl Default for ConceptSection {
    fn default() -> Self {
        ConceptSection {
            count: 8,
            content_count: 4,
            per_concept: 200,
            holdout_fraction: 0.1,
            dual: false,
            split: Split::LeftRight.name().into(),
        }
    }
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            latent: "identity".into(),
            patch: 2,
            latent_channels: 6,
            hidden: 16,
            conv_layers: 3,
            embed_dim: 32,
            global_hidden: 64,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            iterations: 2000,
            batch_size: 16,
            learning_rate: 3.2e-4,
            alpha_bce: 2.0,
            conditional: false,
            log_every: 10,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            t_min: 1,
            t_max: 0,
            reverse: "ddim".into(),
            samples_per_class: 10,
            degrade: String::new(),
            severity: 0.25,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { kind: "strength".into(), values: Vec::new(), iterations: 0, plot: false }
    }
}

/// Per-stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub bank: u64,
    pub registry: u64,
    pub content_registry: u64,
    pub images: u64,
    pub model: u64,
    pub train: u64,
    pub eval: u64,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.shape()?;
        self.split()?;
        self.reverse_is_ancestral()?;
        if self.codec.bits < 16 {
            return Err(config_err(format!("codec.bits must be at least 16, got {}", self.codec.bits)));
        }
        if !(self.codec.strength > 0.0 && self.codec.strength <= 1.0) {
            return Err(config_err(format!("codec.strength must lie in (0, 1], got {}", self.codec.strength)));
        }
        if self.concepts.count == 0 || self.concepts.per_concept < 2 || (self.concepts.dual && self.concepts.content_count == 0) {
            return Err(config_err("concept counts must be positive and per_concept at least 2"));
        }
        if !(0.0..1.0).contains(&self.concepts.holdout_fraction) {
            return Err(config_err("concepts.holdout_fraction must lie in [0, 1)"));
        }
        if !matches!(self.diffusion.latent.as_str(), "identity" | "patch") {
            return Err(config_err(format!("diffusion.latent must be identity or patch, got {:?}", self.diffusion.latent)));
        }
        if !matches!(self.sweep.kind.as_str(), "strength" | "concepts" | "per-concept") {
            return Err(config_err(format!("sweep.kind must be strength, concepts or per-concept, got {:?}", self.sweep.kind)));
        }
        let steps = self.diffusion.steps;
        if self.eval.t_min == 0 || self.eval.t_min > self.t_max() || self.t_max() > steps {
            return Err(config_err(format!("eval step range {}..={} is outside 1..={steps}", self.eval.t_min, self.t_max())));
        }
        if self.train.log_every == 0 {
            return Err(config_err("train.log_every must be positive"));
        }
        self.degradations()?;
        Ok(())
    }

    pub fn shape(&self) -> CliResult<Shape> {
        let s = Shape::parse(&self.codec.shape).map_err(|e| config_err(format!("codec.shape: {e}")))?;
        s.validate(4).map_err(|e| config_err(format!("codec.shape: {e}")))?;
        Ok(s)
    }

    pub fn split(&self) -> CliResult<Split> {
        Split::parse(&self.concepts.split).ok_or_else(|| config_err(format!("concepts.split must be left-right or top-bottom, got {:?}", self.concepts.split)))
    }

    pub fn reverse_is_ancestral(&self) -> CliResult<bool> {
        match self.eval.reverse.as_str() {
            "ddim" => Ok(false),
            "ddpm" => Ok(true),
            other => Err(config_err(format!("eval.reverse must be ddim or ddpm, got {other:?}"))),
        }
    }

    pub fn t_max(&self) -> usize {
        if self.eval.t_max == 0 {
            self.diffusion.steps
        } else {
            self.eval.t_max
        }
    }

    pub fn schedule(&self) -> CliResult<NoiseSchedule> {
        Ok(NoiseSchedule::linear(self.diffusion.steps, self.diffusion.beta_start, self.diffusion.beta_end)?)
    }

    pub fn degradations(&self) -> CliResult<Vec<Degradation>> {
        let r = if self.eval.degrade.trim().is_empty() {
            robustness::all_kinds(self.eval.severity)
        } else {
            robustness::parse_spec(&self.eval.degrade)
        };
        r.map_err(|e| config_err(format!("eval.degrade: {e}")))
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            bank: s,
            registry: s.wrapping_add(1),
            content_registry: s.wrapping_add(2),
            images: s.wrapping_add(3),
            model: s.wrapping_add(4),
            train: s.wrapping_add(5),
            eval: s.wrapping_add(6),
        }
    }

    /// Sweep points, falling back to the default grid of the sweep kind.
    pub fn sweep_values(&self) -> Vec<f64> {
        if !self.sweep.values.is_empty() {
            return self.sweep.values.clone();
        }
        match self.sweep.kind.as_str() {
            "strength" => (1..=10).map(|i| i as f64 / 10.0).collect(),
            "concepts" => vec![2.0, 4.0, 8.0, 16.0, 32.0],
            _ => vec![10.0, 20.0, 50.0, 100.0, 200.0],
        }
    }
}
