//! Command-line pipeline for heterogeneous price-effect estimation on waste
//! panels: validate data, generate synthetic panels, estimate pointwise and
//! average effects, run overlap diagnostics and heterogeneity summaries,
//! simulate cost effects, evaluate the household model, and fit the fixed
//! effects baseline.
//!
//! Exit codes: 0 success, 1 estimation or diagnostic failure, 2 invalid
//! input. Progress goes to stderr; data goes to files and stdout only.

mod commands;
mod config;
mod output;
mod pipeline;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "payt", version, about = "Waste pricing policy evaluation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured worker count (0 = runtime default).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the panel and print a line-oriented report.
    Validate(ConfigArgs),
    /// Generate a synthetic panel plus its truth manifest.
    Dgp(commands::dgp::DgpArgs),
    /// Run the two-stage estimation for every outcome and policy year.
    Estimate(ConfigArgs),
    /// Overlap diagnostics on the propensity predictions.
    Diagnose {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Heterogeneity tests and summaries over estimate outputs.
    Heterogeneity {
        #[command(flatten)]
        args: ConfigArgs,
        /// Grouping for the homogeneity test and pairwise comparisons:
        /// `policy_year` or `covariate:<name>` (quartile groups).
        #[arg(long, default_value = "policy_year")]
        group_by: String,
    },
    /// Cost effects per unit and in summary.
    Emc {
        #[command(flatten)]
        args: ConfigArgs,
        /// Simulate adoption for untreated units too (prices assigned by
        /// closest propensity match).
        #[arg(long)]
        all_units: bool,
    },
    /// Household-model comparative statics with a finite-difference check.
    Theory {
        /// Optional JSON file holding a household model to evaluate.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Two-way fixed-effects event study with a pretrend test.
    Fe(ConfigArgs),
    /// Time the pipeline stages on the configured data.
    Bench(ConfigArgs),
}

/// Failures after inputs were accepted exit 1; input problems exit 2.
pub enum CliError {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Input(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
            CliError::Run(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

pub type CliResult = Result<(), CliError>;

fn input_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Input(e.into())
}

fn run_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Run(e.into())
}

fn load_config(args: &ConfigArgs) -> Result<config::RunConfig, CliError> {
    let mut cfg = config::RunConfig::load(&args.config).map_err(input_err)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| input_err(anyhow::anyhow!("cannot create {}: {e}", cfg.out_dir.display())))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: CliResult = match cli.command {
        Command::Validate(args) => {
            load_config(&args).and_then(|cfg| commands::validate::run(&cfg))
        }
        Command::Dgp(args) => commands::dgp::run(&args),
        Command::Estimate(args) => {
            load_config(&args).and_then(|cfg| commands::estimate::run(&cfg))
        }
        Command::Diagnose { args } => {
            load_config(&args).and_then(|cfg| commands::diagnose::run(&cfg))
        }
        Command::Heterogeneity { args, group_by } => {
            load_config(&args).and_then(|cfg| commands::heterogeneity::run(&cfg, &group_by))
        }
        Command::Emc { args, all_units } => {
            load_config(&args).and_then(|cfg| commands::emc::run(&cfg, all_units))
        }
        Command::Theory { model } => commands::theory::run(model.as_deref()),
        Command::Fe(args) => load_config(&args).and_then(|cfg| commands::fe::run(&cfg)),
        Command::Bench(args) => load_config(&args).and_then(|cfg| commands::bench::run(&cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
