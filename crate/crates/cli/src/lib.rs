//! Command-line orchestration for the transduction workbench.
//!
//! The binary wires data generation, training, decoding, evaluation,
//! difficulty binning, saliency export and the throughput benchmark into
//! subcommands driven by one JSON config. Everything is exposed as a
//! library so integration tests can call subcommands in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::eval::EvalKind;
use crate::error::CliError;
use crate::report::ReportFile;

#[derive(Debug, Parser)]
#[command(name = "ctcst", version, about = "CTC sequence transduction workbench")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the model and train seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalKindArg {
    Bleu,
    Wer,
    Reorder,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train and eval splits.
    GenData,
    /// Train a model on the generated train split.
    Train,
    /// Greedy-decode the eval split with the trained model.
    Decode,
    /// Score the hypothesis file.
    Eval {
        #[arg(value_enum)]
        kind: EvalKindArg,
        /// Difficulty bins for the reorder report.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Difficulty-binned BLEU and reordering-correctness curves.
    BinAnalysis {
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Export saliency and reordering heatmaps.
    Saliency {
        /// Transformer layer whose saliency matrix is exported (1-based).
        #[arg(long)]
        layer: usize,
        /// Token occurrence: an index into the first eval utterance's
        /// decode, or `<utterance-id>:<index>`.
        #[arg(long, default_value = "0")]
        token: String,
    },
    /// Greedy-decoding throughput over the eval split.
    BenchDecode {
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
}

/// Run a parsed invocation, returning the report it wrote.
pub fn run(cli: Cli) -> Result<ReportFile, CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let out = cli.out.ok_or_else(|| CliError::Config("--out is required".into()))?;
    let loaded = config::load_config(&config_path, cli.seed)?;
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("cannot create --out {}: {e}", out.display())))?;

    match cli.command {
        Command::GenData => commands::gen_data::run(&loaded, &out),
        Command::Train => commands::train::run(&loaded, &out),
        Command::Decode => commands::decode::run(&loaded, &out),
        Command::Eval { kind, bins } => {
            let kind = match kind {
                EvalKindArg::Bleu => EvalKind::Bleu,
                EvalKindArg::Wer => EvalKind::Wer,
                EvalKindArg::Reorder => EvalKind::Reorder,
            };
            commands::eval::run(&loaded, &out, kind, bins)
        }
        Command::BinAnalysis { bins } => commands::bin_analysis::run(&loaded, &out, bins),
        Command::Saliency { layer, token } => {
            commands::saliency::run(&loaded, &out, layer, &token)
        }
        Command::BenchDecode { repetitions } => commands::bench::run(&loaded, &out, repetitions),
    }
}
