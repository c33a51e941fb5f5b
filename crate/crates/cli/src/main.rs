//! `lbmha`: language-based mental health assessment from geolocated posts.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use lbmha::Error;

use crate::commands::{AdaptArgs, AnalyzeCommand, ReliabilityArgs, ScoreArgs, SynthArgs};
use crate::config::Settings;

#[derive(Parser, Debug)]
#[command(name = "lbmha", version, about = "County-level depression and anxiety scores from geolocated posts")]
struct Cli {
    /// Flat `key = value` configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step. Required by randomized commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to LBMHA_WORKERS). Never changes results.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score posts into user-period scores and reported county cells.
    Score(ScoreArgs),
    /// Split-half reliability grid and user-threshold sweep.
    Reliability(ReliabilityArgs),
    /// Filter a lexicon for use on a new corpus.
    Adapt(AdaptArgs),
    /// Validation analyses over reported cells.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Write synthetic fixtures.
    Synth(SynthArgs),
}

fn run(cli: Cli) -> lbmha::Result<()> {
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(s) = cli.seed {
        settings.set("seed", s.to_string());
    }
    if let Some(o) = &cli.output {
        settings.set("output", o.display().to_string());
    }
    let workers = match cli.workers {
        Some(w) => Some(w),
        None => match settings.get::<usize>("workers")? {
            Some(w) => Some(w),
            None => std::env::var("LBMHA_WORKERS")
                .ok()
                .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid LBMHA_WORKERS '{v}'"))))
                .transpose()?,
        },
    };
    if workers == Some(0) {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    log::debug!("running with {} workers", pool.current_num_threads());
    pool.install(|| match cli.command {
        Command::Score(a) => commands::score::run(settings, a),
        Command::Reliability(a) => commands::reliability::run(settings, a),
        Command::Adapt(a) => commands::adapt::run(settings, a),
        Command::Analyze(a) => commands::analyze::run(settings, a),
        Command::Synth(a) => commands::synth::run(settings, a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() { ExitCode::from(2) } else { ExitCode::from(1) }
        }
    }
}
