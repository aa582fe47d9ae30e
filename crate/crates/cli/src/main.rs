//! Command-line experiment runner for the zerocross simulation lab.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical guard abort.

// Preconditions on floats are written `!(x > 0.0)` on purpose: the
// negation also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiments;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_config, ExperimentKind};
use experiments::{run_experiment, RunError};

/// Environment variable overriding the output root directory.
const OUT_ENV: &str = "ZEROCROSS_OUT";

#[derive(Parser)]
#[command(name = "zerocross", version, about = "Simulation experiments for a diffusion whose diffusivity is updated at each origin crossing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root directory (default: ./runs, or $ZEROCROSS_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact fixed-horizon samples of the coupled process.
    Sample(RunArgs),
    /// Random-walk discrete scheme, compared against the exact sampler.
    Discrete(RunArgs),
    /// Analytic vs Monte Carlo survival probabilities.
    Survival(RunArgs),
    /// Rescaled empirical law against candidate limit-law scalings.
    LimitLaw(RunArgs),
    /// Weak-sense generator checks.
    Generator(RunArgs),
    /// Finite-difference solver run with closed-form comparison.
    Pde(RunArgs),
    /// Blow-up probes over a sweep of drive exponents.
    BlowupScan(RunArgs),
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Sample(a) => (ExperimentKind::Sample, a),
            Command::Discrete(a) => (ExperimentKind::Discrete, a),
            Command::Survival(a) => (ExperimentKind::Survival, a),
            Command::LimitLaw(a) => (ExperimentKind::LimitLaw, a),
            Command::Generator(a) => (ExperimentKind::Generator, a),
            Command::Pde(a) => (ExperimentKind::Pde, a),
            Command::BlowupScan(a) => (ExperimentKind::BlowupScan, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();

    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config(&text, kind) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("invalid config for `{}`:", kind.name());
            for e in errors {
                eprintln!("  - {e}");
            }
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out_root = args
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));

    match run_experiment(kind, &cfg, &out_root) {
        Ok((dir, report)) => {
            println!("run {} -> {}", report.run_id, dir.display());
            println!(
                "{}",
                serde_json::to_string_pretty(&report.summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(RunError::Numerical(msg)) => {
            eprintln!("numerical guard abort: {msg}");
            ExitCode::from(3)
        }
        Err(RunError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(1)
        }
    }
}
