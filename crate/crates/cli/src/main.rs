use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixborrow::config::RunConfig;
use mixborrow::{Error, Result};

mod commands;
mod out;

use out::OutDir;

/// Bayesian multivariate index models for exposure mixtures.
#[derive(Parser)]
#[command(name = "mixborrow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing); nothing is written elsewhere
    #[arg(long)]
    out: PathBuf,
    /// Override the seed in the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: MIXBORROW_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write chain dumps and summaries
    Fit(Common),
    /// Generate a synthetic dataset with its ground truth
    Simulate(Common),
    /// Run a replication study
    Study(Common),
    /// Post-process an existing chain dump
    Summarize(Common),
    /// Exposure importance from an existing chain dump
    Importance(Common),
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("MIXBORROW_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("MIXBORROW_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Fit(c) => ("fit", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Study(c) => ("study", c),
        Command::Summarize(c) => ("summarize", c),
        Command::Importance(c) => ("importance", c),
    };
    if let Some(n) = thread_count(common.threads)? {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.chain.seed = seed;
    }
    log::info!("{name}: config {}", common.config.display());
    let out = OutDir::create(&common.out)?;
    match &cli.command {
        Command::Fit(_) => commands::fit(&cfg, &out),
        Command::Simulate(_) => commands::simulate(&cfg, &out),
        Command::Study(_) => commands::study(&cfg, &out),
        Command::Summarize(_) => commands::summarize(&cfg, &out),
        Command::Importance(_) => commands::importance(&cfg, &out),
    }
}

fn report(kind: &str, message: &str, validation: bool) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message, "validation": validation } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim(), true);
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let validation = e.is_validation();
            report(e.kind(), &e.to_string(), validation);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
