//! `irl`: learn rewards, evaluate them and benchmark inference from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "irl", version, about = "Maximum-entropy inverse reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn reward parameters; writes the result as JSON.
    Learn(Args),
    /// Reward-recovery sweeps, learner comparisons or scoring; writes CSV.
    Eval(Args),
    /// Time inference against horizon; writes CSV.
    Bench(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file, overriding the config. Standard output otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<bool> {
    let (name, args) = match &cli.command {
        Command::Learn(a) => ("learn", a),
        Command::Eval(a) => ("eval", a),
        Command::Bench(a) => ("bench", a),
    };
    let cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let out = args.out.clone().or(cfg.out.clone());
    let missing = || format!("config {} has no [{name}] section", args.config.display());
    match cli.command {
        Command::Learn(_) => commands::learn(cfg.learn.as_ref().with_context(missing)?, seed, out.as_ref()),
        Command::Eval(_) => commands::eval(cfg.eval.as_ref().with_context(missing)?, seed, out.as_ref()),
        Command::Bench(_) => commands::bench(cfg.bench.as_ref().with_context(missing)?, seed, out.as_ref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
