//! Command-line surface: gen | train | eval | study | report.

mod commands;
mod config;
mod workdir;

pub use config::{parse_style, CorpusSection, EvalSection, ModelSection, PathsSection, RunConfig};
pub use workdir::{Manifest, Workdir};

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Error with a machine-parsable category; printed as one line
/// `error[category]: message` on exit.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    fn tagged(category: &'static str) -> impl Fn(String) -> CliError {
        move |message| CliError { category, message }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::tagged("config")(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self::tagged("usage")(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self::tagged("io")(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::tagged("data")(msg.into())
    }

    pub fn corrupt(msg: impl Into<String>) -> Self {
        Self::tagged("corrupt")(msg.into())
    }

    pub fn busy(msg: impl Into<String>) -> Self {
        Self::tagged("busy")(msg.into())
    }

    pub fn incompatible(msg: impl Into<String>) -> Self {
        Self::tagged("incompatible")(msg.into())
    }

    pub fn train(msg: impl Into<String>) -> Self {
        Self::tagged("train")(msg.into())
    }

    pub fn eval(msg: impl Into<String>) -> Self {
        Self::tagged("eval")(msg.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}]: {}", self.category, self.message)
    }
}

impl From<crate::corpus::CorpusError> for CliError {
    fn from(e: crate::corpus::CorpusError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        use crate::model::ModelError;
        match &e {
            ModelError::Corruption(_) => CliError::corrupt(e.to_string()),
            ModelError::VersionMismatch { .. } => CliError::incompatible(e.to_string()),
            ModelError::Io(_) => CliError::io(e.to_string()),
            _ => CliError::train(e.to_string()),
        }
    }
}

impl From<crate::trainer::TrainError> for CliError {
    fn from(e: crate::trainer::TrainError) -> Self {
        match &e {
            crate::trainer::TrainError::Config(_) => CliError::config(e.to_string()),
            crate::trainer::TrainError::Io(_) => CliError::io(e.to_string()),
            _ => CliError::train(e.to_string()),
        }
    }
}

impl From<crate::evalsuite::EvalError> for CliError {
    fn from(e: crate::evalsuite::EvalError) -> Self {
        match &e {
            crate::evalsuite::EvalError::Io(_) => CliError::io(e.to_string()),
            crate::evalsuite::EvalError::Config(_) => CliError::config(e.to_string()),
            _ => CliError::eval(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "xling", about = "Cross-lingual chain-of-thought laboratory", version)]
pub struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both corpus and train seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides paths.workdir from the config.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate pseudo-language datasets and the language manifest.
    Gen {
        /// Overwrite existing datasets (prior checksums are logged).
        #[arg(long)]
        force: bool,
    },
    /// Run the training ladder and write checkpoints plus metrics.
    Train {
        /// Ladder prefix: base | xicl | msampling | random-cot | xdistill | all.
        #[arg(long, default_value = "all")]
        stages: String,
        /// Continue from the last saved train state.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint path; defaults to the final training checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Prompt style override.
        #[arg(long)]
        style: Option<String>,
        /// Evaluate at most this many queries per language.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run a study: ablation | direction | paths | alignment | datasize.
    Study {
        #[arg(long)]
        kind: String,
    },
    /// Collate stage metrics and eval tables into one markdown summary.
    Report,
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.corpus.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(workdir) = &cli.workdir {
        cfg.paths.workdir = workdir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run() {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Gen { force } => commands::cmd_gen(&cfg, *force),
        Command::Train { stages, resume } => commands::cmd_train(&cfg, stages, *resume),
        Command::Eval {
            checkpoint,
            style,
            limit,
        } => commands::cmd_eval(&cfg, checkpoint.as_deref(), style.as_deref(), *limit),
        Command::Study { kind } => commands::cmd_study(&cfg, kind),
        Command::Report => commands::cmd_report(&cfg),
    }
}
