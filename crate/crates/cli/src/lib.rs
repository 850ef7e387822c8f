//! Command-line front end for the `causal-sde` toolkit.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::Overrides;
pub use crate::error::Failure;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "CAUSAL_SDE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "causal-sde", version, about = "Simulate, intervene on and test Levy-driven SDE systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV, JSON and DOT files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Euler step length.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Significance level for statistical tests.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the system and write paths.csv.
    Simulate,
    /// Print the postintervention system; simulate it when a grid is given.
    Intervene,
    /// Print the signature edges and write signature.dot.
    Signature,
    /// Generator terms and test-field values at probe points.
    Generator,
    /// Compare the intervened Euler SEM with the Euler scheme of the
    /// postintervention system.
    CheckCommute,
    /// Test whether two systems have the same postintervention law.
    CheckIdentify,
    /// Strong-error table for decreasing step lengths.
    Convergence,
    /// Run a builtin example end to end.
    Demo {
        /// One of chem, ou, two-signatures, ito-counterexample.
        name: String,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            delta: self.delta,
            horizon: self.horizon,
            alpha: self.alpha,
        }
    }
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<(), Failure> {
    let ctx = Context {
        out: cli.common.out.clone(),
    };
    let over = cli.common.overrides();
    if let Command::Demo { name } = &cli.command {
        return commands::demo_cmd(&ctx, name, &over);
    }
    let path = cli
        .common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required for this command".into()))?;
    let cfg = config::resolve(&config::load(path)?, &over)?;
    match &cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx, &cfg),
        Command::Intervene => commands::intervene_cmd(&ctx, &cfg),
        Command::Signature => commands::signature_cmd(&ctx, &cfg),
        Command::Generator => commands::generator_cmd(&ctx, &cfg),
        Command::CheckCommute => commands::check_commute_cmd(&ctx, &cfg),
        Command::CheckIdentify => commands::check_identify_cmd(&ctx, &cfg),
        Command::Convergence => commands::convergence_cmd(&ctx, &cfg),
        Command::Demo { .. } => unreachable!("handled above"),
    }
}

/// Applies `CAUSAL_SDE_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}
