//! Experiment driver for the `betaev` binary: TOML configuration, the
//! gen/train/eval/bootstrap commands and their on-disk layout.

pub mod commands;
pub mod config;
pub mod error;
pub mod stats;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides, CONFIG_REFERENCE};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "betaev", version, about = "Evidential binary classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output_dir` and $BETAEV_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one field, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct WithCheckpoint {
    #[command(flatten)]
    pub common: Common,
    /// Model directory to use instead of `<out>/model`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test splits and the shifted probe set.
    #[command(after_help = CONFIG_REFERENCE)]
    Gen(Common),
    /// Train the evidential model (and the sigmoid baseline).
    #[command(after_help = CONFIG_REFERENCE)]
    Train(Common),
    /// Score the test set, write coverage curves and uncertainty tables.
    #[command(after_help = CONFIG_REFERENCE)]
    Eval(WithCheckpoint),
    /// Drop the most uncertain training samples and retrain.
    #[command(after_help = CONFIG_REFERENCE)]
    Bootstrap(WithCheckpoint),
    /// Print the effective configuration as TOML.
    #[command(after_help = CONFIG_REFERENCE)]
    ShowConfig(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig, CliError> {
    let overrides = Overrides {
        seed: c.seed,
        out: c.out.clone(),
        sets: c.sets.clone(),
    };
    ExperimentConfig::load(c.config.as_deref(), &overrides)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(c) => commands::cmd_gen(&load(&c)?),
        Command::Train(c) => commands::cmd_train(&load(&c)?),
        Command::Eval(w) => commands::cmd_eval(&load(&w.common)?, w.checkpoint.as_deref()),
        Command::Bootstrap(w) => commands::cmd_bootstrap(&load(&w.common)?, w.checkpoint.as_deref()),
        Command::ShowConfig(c) => {
            print!("{}", load(&c)?.to_toml());
            Ok(())
        }
    }
}
