//! `sepwalk`: enumerate coefficient tables, solve the decay constants,
//! sample the core process, run Monte Carlo scans and verify identities.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sepwalk_core::Error;

#[derive(Parser)]
#[command(name = "sepwalk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Model configuration file (.toml or .json).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset name, e.g. bb_symmetric_L2 or "stay_positive_drift_p(1/3)".
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Target level.
    #[arg(long, global = true)]
    pub n: Option<i64>,
    /// Largest level for tables and scans.
    #[arg(long = "n-max", global = true)]
    pub n_max: Option<i64>,
    /// Monte Carlo replicates.
    #[arg(long, global = true)]
    pub reps: Option<u64>,
    /// Random seed; required by every command that samples.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Residual tolerance for floating-point identity checks.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Step cap for truncated enumeration and sampling.
    #[arg(long = "step-cap", global = true)]
    pub step_cap: Option<usize>,
    /// Store individual paths up to this level.
    #[arg(long = "joint-n-max", global = true)]
    pub joint_n_max: Option<i64>,
    /// Table JSON written by `enumerate` (its `.joint.jsonl` sidecar is read if present).
    #[arg(long, global = true)]
    pub tables: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arith {
    Auto,
    Exact,
    Float,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Renewal,
    Factorization,
    Representation,
    Corollary,
    Blocks,
    Regeneration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    Weighted,
    Naive,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate surviving paths and write the coefficient table JSON.
    Enumerate {
        #[arg(long, value_enum, default_value_t = Arith::Auto)]
        arith: Arith,
        #[command(flatten)]
        common: Common,
    },
    /// Solve q, μ, ψ₀ from a table file (or from an inline enumeration).
    SolveConstants {
        #[command(flatten)]
        common: Common,
    },
    /// Sample core realizations as JSON lines.
    Core {
        /// Increment blocks per realization.
        #[arg(long, default_value_t = 10)]
        blocks: usize,
        /// Glue blocks until the path has this many steps (overrides --blocks).
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate P*(B_n) for n = 0..=n-max and write a CSV scan.
    Mc {
        #[arg(long, value_enum, default_value_t = Estimator::Weighted)]
        estimator: Estimator,
        #[command(flatten)]
        common: Common,
    },
    /// Renewal-function convergence, core speed and prefix-law distances.
    Limits {
        /// Core horizon in steps for the slope estimate.
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        /// Prefix length for the distance trend.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run an identity suite; exits nonzero when an identity fails.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, value_enum, default_value_t = Arith::Auto)]
        arith: Arith,
        #[command(flatten)]
        common: Common,
    },
}

/// Exit codes: 1 identity failure, 2 invalid input, 3 inconclusive,
/// 4 model excluded by the return assumption, 5 capability.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::IdentityFailure(_)) => 1,
        Some(Error::Inconclusive(_)) => 3,
        Some(Error::AssumptionExcluded(_)) => 4,
        Some(Error::Capability(_)) => 5,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enumerate { arith, common } => commands::enumerate(&common, arith),
        Command::SolveConstants { common } => commands::solve_constants(&common),
        Command::Core { blocks, horizon, common } => commands::core(&common, blocks, horizon),
        Command::Mc { estimator, common } => commands::mc(&common, estimator),
        Command::Limits { horizon, k, common } => commands::limits(&common, horizon, k),
        Command::Verify { suite, arith, common } => commands::verify(&common, suite, arith),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
