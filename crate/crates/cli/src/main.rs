//! `raise`: synthesize data, train the base ranker and the re-ranker,
//! evaluate, ablate, profile and explain.
//!
//! Every command reads and writes its artifacts in `--workdir` (default `.`).
//! Settings come from `--config FILE` (`key=value` lines), then the
//! `RAISE_SEED` environment variable, then `--key value` flags.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "raise", version, about = "Intention-aware re-ranking of top-n recommendation lists")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// File of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides such as `--t 2`, `--dropout=0.3` or `--exclude-train`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic interactions.tsv and reviews.jsonl.
    GenSynth(Settings),
    /// Hash-embed reviews into embeddings.rve.
    EmbedReviews(Settings),
    /// Train the GMF base ranker into gmf.ckpt.
    TrainBase(Settings),
    /// Write the base ranker's top-n lists for every split.
    MakeLists(Settings),
    /// Train the re-ranker into raise.ckpt.
    TrainRerank(Settings),
    /// Score initial and re-ranked test lists into metrics.tsv.
    Evaluate(Settings),
    /// Train the full, no_idm, no_dte and no_both variants and score them.
    Ablate(Settings),
    /// Write analytic attention costs to cost.tsv and time each mechanism.
    Profile(Settings),
    /// Write the strongest review pairs behind recommendations to explain.tsv.
    Explain(Settings),
}

fn run(cli: Cli) -> raise_core::Result<()> {
    use Command::*;
    let (settings, action): (&Settings, fn(&RunConfig) -> raise_core::Result<()>) = match &cli.command {
        GenSynth(s) => (s, commands::gen_synth),
        EmbedReviews(s) => (s, commands::embed_reviews),
        TrainBase(s) => (s, commands::train_base),
        MakeLists(s) => (s, commands::make_lists_cmd),
        TrainRerank(s) => (s, commands::train_rerank),
        Evaluate(s) => (s, commands::evaluate),
        Ablate(s) => (s, commands::ablate),
        Profile(s) => (s, commands::profile),
        Explain(s) => (s, commands::explain_cmd),
    };
    let seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::load(settings.config.as_deref(), seed.as_deref(), &settings.overrides)?;
    std::fs::create_dir_all(&cfg.workdir).map_err(|e| raise_core::RaiseError::Io {
        path: cfg.workdir.clone(),
        source: e,
    })?;
    action(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
