//! Command-line front end: configuration, commands and error reporting for
//! the `texim` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

pub use config::{Ablation, RunConfig};
pub use error::{CliError, ErrorKind};

#[derive(Debug, Parser)]
#[command(
    name = "texim",
    version,
    about = "Encode text as fixed-size 8-bit images and score pair similarity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(long, value_enum, global = true)]
    pub ablation: Option<Ablation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Learn the vocabulary and train the autoencoder on `paths.corpus`.
    TrainVae,
    /// Write one image per line of `paths.encode_input`.
    Encode,
    /// Train the similarity classifier on the training split.
    TrainSts,
    /// Score the trained classifier on the test split.
    EvalSts,
    /// Histograms and pixel series for the pairs in `paths.report_pairs`.
    Report,
    /// Storage comparison for the configured image size.
    MemoryReport,
}

/// Load and validate the configuration, then run the command. Returns a
/// JSON summary for stdout.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::new(ErrorKind::Usage, "--config <FILE> is required"))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(cli.seed, cli.ablation);
    cfg.validate()?;
    match cli.command {
        Command::TrainVae => commands::train_vae(&cfg, cli.force),
        Command::Encode => commands::encode(&cfg, cli.force),
        Command::TrainSts => commands::train_sts_cmd(&cfg, cli.force),
        Command::EvalSts => commands::eval_sts(&cfg, cli.force),
        Command::Report => commands::report(&cfg, cli.force),
        Command::MemoryReport => commands::memory_report_cmd(&cfg, cli.force),
    }
}
