//! Command-line front end: data synthesis, training in both modes,
//! inference, and the evaluation reports, all emitting plot-ready CSV.
//!
//! Exit codes: 0 success, 2 usage/config, 3 data, 4 protocol, 5 numeric.
//! Set `MODRED_LOG=info` (or `debug`) for progress output on stderr.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "modred", version, about = "Channel-agnostic biosignal representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Role {
    Coordinator,
    Worker,
    /// All roles in one process over the in-memory transport.
    Memory,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EvalKind {
    Similarity,
    ReconMae,
    MiClf,
    Knn,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic record set and write it in the record format.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train all channel models in one process.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Train baseline models without embedding alignment.
        #[arg(long)]
        no_align: bool,
    },
    /// Run one role of the distributed training protocol.
    PretrainDist {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_align: bool,
        #[arg(long, value_enum)]
        role: Role,
        /// Worker channel index (workers only).
        #[arg(long)]
        channel: Option<usize>,
        /// Coordinator listen address or worker connect address (HOST:PORT).
        #[arg(long, default_value = "127.0.0.1:7070")]
        endpoint: String,
    },
    /// Export unmasked class-token embeddings to CSV.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to the config's).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Record manifest (defaults to the config's).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Emit original and reconstructed traces with masked-window flags.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// "native" or a fixed source channel index.
        #[arg(long, default_value = "native")]
        source: String,
    },
    /// Run one of the evaluation reports.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: EvalKind,
        /// Random-crop repeats for the similarity report.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Cross-validation folds (default 5 for mi-clf, 10 for knn).
        #[arg(long)]
        folds: Option<usize>,
        /// Neighbor count for knn.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Channel whose embeddings feed mi-clf and knn.
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

/// Stderr logging gated by `MODRED_LOG` (`info` or `debug`).
pub fn log_info(message: &str) {
    match std::env::var("MODRED_LOG").as_deref() {
        Ok("info") | Ok("debug") => eprintln!("[modred] {message}"),
        _ => {}
    }
}

fn load_resolved(common: &Common, no_align: bool) -> Result<RunConfig, CliError> {
    RunConfig::load(&common.config)?.resolve(common.seed, common.out.as_deref(), no_align)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_resolved(&common, false)?;
            commands::cmd_synth(&cfg)
        }
        Command::Pretrain { common, no_align } => {
            let cfg = load_resolved(&common, no_align)?;
            commands::cmd_pretrain(&cfg)
        }
        Command::PretrainDist { common, no_align, role, channel, endpoint } => {
            let cfg = load_resolved(&common, no_align)?;
            commands::cmd_pretrain_dist(&cfg, role, channel, &endpoint)
        }
        Command::Embed { common, checkpoints, manifest } => {
            let cfg = load_resolved(&common, false)?;
            let checkpoints = checkpoints.unwrap_or_else(|| cfg.checkpoints_path().to_path_buf());
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path().to_path_buf());
            commands::cmd_embed(&cfg, &checkpoints, &manifest)
        }
        Command::Reconstruct { common, checkpoints, manifest, source } => {
            let cfg = load_resolved(&common, false)?;
            let checkpoints = checkpoints.unwrap_or_else(|| cfg.checkpoints_path().to_path_buf());
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path().to_path_buf());
            commands::cmd_reconstruct(&cfg, &checkpoints, &manifest, &source)
        }
        Command::Eval { common, checkpoints, manifest, kind, repeats, folds, k, channel } => {
            let cfg = load_resolved(&common, false)?;
            let checkpoints = checkpoints.unwrap_or_else(|| cfg.checkpoints_path().to_path_buf());
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path().to_path_buf());
            commands::cmd_eval(&cfg, &checkpoints, &manifest, kind, repeats, folds, k, channel)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
