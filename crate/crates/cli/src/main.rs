//! `convirt`: paired image–text contrastive pretraining and evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use convirt_cli::commands::{self, CommandContext};
use convirt_cli::config::RunConfig;
use convirt_cli::logging::Logger;
use convirt_cli::CliError;

#[derive(Parser)]
#[command(
    name = "convirt",
    version,
    about = "Bidirectional image-text contrastive pretraining at desk scale",
    long_about = "Generates paired corpora, pretrains a two-tower encoder with a \
                  bidirectional contrastive objective, and evaluates the learned \
                  representations by linear probing, fine-tuning, and zero-shot \
                  retrieval.\n\nSet CONVIRT_LOG to quiet, info, or debug to control \
                  stderr verbosity."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (`key = value` lines); omitted means all defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root random seed; overrides the config file's `seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Output directory, created if needed.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Worker threads for view preparation (results are identical for any
    /// value).
    #[arg(long, value_name = "N", default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired corpus into the output directory.
    Synth(CommonArgs),
    /// Pretrain the two-tower encoder on a corpus (`data.corpus`).
    Pretrain(CommonArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(CommonArgs),
    /// Train a linear classifier on frozen checkpoint representations.
    Probe(CommonArgs),
    /// Fine-tune a checkpoint end to end on labeled data.
    Finetune(CommonArgs),
    /// Zero-shot image-image and text-image retrieval.
    Retrieve(CommonArgs),
    /// Export per-image representations as CSV.
    ExportEmbeddings(CommonArgs),
}

fn context(args: &CommonArgs, log: Logger) -> Result<CommandContext, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(CommandContext {
        cfg,
        out: args.out.clone(),
        workers: args.workers.max(1),
        log,
    })
}

fn dispatch(command: &Command, log: Logger) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => commands::run_synth(&context(a, log)?),
        Command::Pretrain(a) => commands::run_pretrain(&context(a, log)?),
        Command::Gradcheck(a) => commands::run_gradcheck(&context(a, log)?),
        Command::Probe(a) => commands::run_probe(&context(a, log)?),
        Command::Finetune(a) => commands::run_finetune(&context(a, log)?),
        Command::Retrieve(a) => commands::run_retrieve(&context(a, log)?),
        Command::ExportEmbeddings(a) => commands::run_export_embeddings(&context(a, log)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Logger::from_env();
    match dispatch(&cli.command, log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One machine-parseable line: `error: <category>: <message>`.
            eprintln!("error: {}: {}", e.category(), e);
            ExitCode::FAILURE
        }
    }
}
