//! Command-line driver for the watermark attribution pipeline.
//!
//! Every command reads a [`config::RunConfig`], works inside its output
//! directory and leaves plain-text reports plus a run manifest behind.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use conceptmark_core::parallel::Exec;

use crate::commands::Run;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "conceptmark", version, about = "Concept watermark generation, training and attribution")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override values from the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Watermark embedding strength m.
    #[arg(long, global = true, value_name = "F")]
    pub strength: Option<f64>,
    /// Weight of the bit-recovery loss.
    #[arg(long, global = true, value_name = "F")]
    pub alpha_bce: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub concepts: Option<usize>,
    #[arg(long, global = true, value_name = "K")]
    pub per_concept: Option<usize>,
    /// Two watermarks per image, one per half.
    #[arg(long, global = true)]
    pub dual: bool,
    /// Degradations as `kind:severity,...`.
    #[arg(long, global = true, value_name = "SPEC")]
    pub degrade: Option<String>,
    /// Last step of the held-out noising range.
    #[arg(long, global = true, value_name = "INT")]
    pub t_max: Option<usize>,
    #[arg(long, global = true, value_name = "INT")]
    pub iterations: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the carrier bank and the concept secrets.
    GenBank,
    /// Render and encrypt the procedural dataset.
    BuildDataset,
    /// Train the denoiser on the encrypted training images.
    Train,
    /// Sample images from the trained model and attribute them.
    Sample,
    /// Attribute given images or directories of PPM/PGM files.
    Attribute {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Held-out attribution accuracy; codec-only when no model was trained.
    Eval,
    /// Attribution accuracy under image degradations.
    Robustness,
    /// Cosine similarity matrix of the concept watermarks.
    OrthoReport,
    /// Accuracy and PSNR over a parameter grid.
    Sweep {
        /// `strength`, `concepts` or `per-concept`.
        #[arg(long)]
        kind: Option<String>,
        /// Write a gnuplot script next to the table.
        #[arg(long)]
        plot: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenBank => "gen-bank",
            Command::BuildDataset => "build-dataset",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Attribute { .. } => "attribute",
            Command::Eval => "eval",
            Command::Robustness => "robustness",
            Command::OrthoReport => "ortho-report",
            Command::Sweep { .. } => "sweep",
        }
    }
}

impl Overrides {
    /// Loads the config file, if any, and applies the flags on top.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.strength {
            cfg.codec.strength = v;
        }
        if let Some(v) = self.alpha_bce {
            cfg.train.alpha_bce = v;
        }
        if let Some(v) = self.concepts {
            cfg.concepts.count = v;
        }
        if let Some(v) = self.per_concept {
            cfg.concepts.per_concept = v;
        }
        if self.dual {
            cfg.concepts.dual = true;
        }
        if let Some(v) = &self.degrade {
            cfg.eval.degrade = v.clone();
        }
        if let Some(v) = self.t_max {
            cfg.eval.t_max = v;
        }
        if let Some(v) = self.iterations {
            cfg.train.iterations = v;
            cfg.sweep.iterations = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        Ok(cfg)
    }
}

/// Runs one command to completion and returns its summary line.
pub fn execute(command: &Command, mut cfg: RunConfig, exec: Exec) -> CliResult<String> {
    if let Command::Sweep { kind, plot } = command {
        if let Some(k) = kind {
            cfg.sweep.kind = k.clone();
        }
        cfg.sweep.plot |= *plot;
    }
    cfg.validate()?;
    let run = Run::new(cfg, exec);
    match command {
        Command::GenBank => commands::gen_bank(run),
        Command::BuildDataset => commands::build_dataset(run),
        Command::Train => commands::train(run, |l| eprintln!("{l}")),
        Command::Sample => commands::sample(run),
        Command::Attribute { inputs } => commands::attribute(run, inputs),
        Command::Eval => commands::eval(run),
        Command::Robustness => commands::robustness(run),
        Command::OrthoReport => commands::ortho_report(run),
        Command::Sweep { .. } => commands::sweep(run, |l| eprintln!("{l}")),
    }
}

pub fn run_cli(cli: &Cli) -> CliResult<String> {
    let cfg = cli.overrides.resolve()?;
    execute(&cli.command, cfg, Exec::default()).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", cli.command.name())),
        other => other,
    })
}
