//! Batch front end: every subcommand reads an experiment document, writes
//! data files plus a resolved config and manifest into `--out`, and prints
//! one summary line.

pub mod commands;
pub mod experiment;

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use eegdet_core::error::{CoreError, ErrorClass, Result};
use eegdet_core::scoring::FaMode;
use eegdet_core::systems::SystemKind;

use crate::commands::Axis;
use crate::experiment::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "eegdet", version, about = "Seizure detection experiments on EEG records")]
pub struct Cli {
    /// Experiment document; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `[experiment] seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Records processed in parallel during inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `[system] kind`.
    #[arg(long, global = true)]
    pub system: Option<SystemKind>,
    /// Overrides `[scoring] fa_mode`.
    #[arg(long = "fa-mode", global = true)]
    pub fa_mode: Option<FaMode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize train/ and eval/ corpora.
    Synth,
    /// Extract feature files from records or directories of records.
    Features { records: Vec<PathBuf> },
    /// Train a system on the train corpus.
    Train,
    /// Write per-epoch posteriors for records.
    Infer {
        #[arg(long)]
        model: PathBuf,
        records: Vec<PathBuf>,
    },
    /// Pooled metrics of posterior files against reference annotations.
    Score {
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// DET curve of posterior files against reference annotations.
    Det {
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Train and score one variant per optimizer or activation.
    Ablate {
        #[arg(long)]
        axis: Axis,
    },
    /// Full pipeline: corpus, train, infer, score and DET.
    Run,
}

/// The experiment config after applying command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| CoreError::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(&text, cli.system)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(mode) = cli.fa_mode {
        cfg.fa_mode = mode;
    }
    if cli.jobs == 0 {
        return Err(CoreError::Config("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

/// Runs the parsed command and returns its summary line.
pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth => commands::cmd_synth(&cfg, out),
        Command::Features { records } => commands::cmd_features(&cfg, records, out),
        Command::Train => commands::cmd_train(&cfg, out),
        Command::Infer { model, records } => commands::cmd_infer(&cfg, model, records, out, cli.jobs),
        Command::Score { posteriors, reference } => commands::cmd_score(&cfg, posteriors, reference, out),
        Command::Det { posteriors, reference } => commands::cmd_det(&cfg, posteriors, reference, out),
        Command::Ablate { axis } => commands::cmd_ablate(&cfg, *axis, out, cli.jobs),
        Command::Run => commands::cmd_run(&cfg, out, cli.jobs),
    }
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

pub fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}
