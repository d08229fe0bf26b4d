//! `delaylab`: runs solver, learner and verification experiments described
//! by a JSON config and writes CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 usage/config/IO error, 2 verification failure.

mod analyze;
mod config;
mod output;
mod solve;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "delaylab", version, about = "Delayed-observation RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact solvers (a-vi, ad-vi, ad-spi) with fixed-point verification.
    Solve(Args),
    /// Sample-based learners across seeds.
    Train(Args),
    /// A verification suite: lemma51, bounds, fixedpoint, gaussian or metrics.
    Analyze(Args),
    /// Learner comparison with median steps to 90% of the optimal return.
    Bench(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for seeds and sweep cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub struct Outcome {
    pub verified: bool,
}

fn run(cli: Cli) -> Result<Outcome> {
    let (Command::Solve(args) | Command::Train(args) | Command::Analyze(args) | Command::Bench(args)) = &cli.command;
    let cfg = ExperimentConfig::load(&args.config)?;
    let base_dir = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = args.out.clone().unwrap_or_else(|| base_dir.join(&cfg.output_dir));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        anyhow::ensure!(j > 0, "--jobs must be at least 1");
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::Solve(_) => solve::run(&cfg, &base_dir, &out),
        Command::Train(_) => sweep::run_train(&cfg, &base_dir, &out),
        Command::Analyze(_) => analyze::run(&cfg, &base_dir, &out),
        Command::Bench(_) => sweep::run_bench(&cfg, &base_dir, &out),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(o) if o.verified => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("verification failed; see the report in the output directory");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
