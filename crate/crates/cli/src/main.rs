//! `sobolis` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical or support
//! error, 4 validation failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sobolis::models::GFunctionSpec;

mod commands;
mod parse;

#[derive(Parser, Debug)]
#[command(
    name = "sobolis",
    version,
    about = "Importance-sampling estimation of Sobol' indices"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate eta_u (and S_u) for a built-in model or a dataset.
    Estimate(EstimateArgs),
    /// Asymptotic variance of the efficient estimator and optimal densities.
    Variance(VarianceArgs),
    /// Reverse-IS sweeps over data, variance surfaces and CV curves.
    Sweep(SweepArgs),
    /// Run the self-check suite on the g-function benchmark.
    Validate(ValidateArgs),
    /// Write a synthetic g-function dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelKind {
    /// g-function on the unit cube.
    Gfun,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Built-in model.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,

    /// g-function coefficients.
    #[arg(long, default_value = "1,2,3")]
    pub a: String,
}

impl ModelArgs {
    pub fn spec(&self) -> anyhow::Result<GFunctionSpec> {
        Ok(GFunctionSpec::new(parse::floats(&self.a)?)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    /// Rank estimator (nearest-neighbour path when |u| > 1).
    Rank,
    /// Nested Monte Carlo.
    DoubleLoop,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Dataset CSV (inputs then output).
    #[arg(long, conflicts_with = "model")]
    pub data: Option<PathBuf>,

    /// Input subset, one-based, e.g. `1,2`.
    #[arg(long)]
    pub u: String,

    /// Sample size (model mode).
    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Sample the inputs in u from Beta(alpha, beta) and reweight (model mode).
    #[arg(long, value_name = "ALPHA,BETA")]
    pub q_beta: Option<String>,

    #[arg(long, value_enum, default_value = "rank")]
    pub estimator: EstimatorKind,

    /// Inner sample size for the double loop.
    #[arg(long, default_value_t = 1000)]
    pub n_inner: usize,

    /// Target law Beta(alpha, beta) on every standardized input (data mode).
    #[arg(long, value_name = "ALPHA,BETA", conflicts_with = "theta")]
    pub theta_all: Option<String>,

    /// Target law per input: `a1,b1;a2,b2;...` (data mode).
    #[arg(long)]
    pub theta: Option<String>,

    /// Lower corner of the input box; defaults to the column minima.
    #[arg(long, requires = "upper")]
    pub lower: Option<String>,

    #[arg(long, requires = "lower")]
    pub upper: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MomentsKind {
    /// Inputs outside u act as noise.
    Averaged,
    /// All inputs controllable.
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Chain {
    /// Closed-form second moments of the complement factors.
    Oracle,
    /// Complement factor 99/96, for the (1,2,3), u = {1,2} benchmark only.
    Published,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CaseKind {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DistKind {
    /// The reference law.
    P,
}

#[derive(Args, Debug)]
pub struct QuadArgs {
    /// Gauss-Legendre points per half-axis.
    #[arg(long, default_value_t = 64)]
    pub order: usize,

    #[arg(long, value_enum, default_value = "averaged")]
    pub moments: MomentsKind,

    #[arg(long, value_enum, default_value = "oracle")]
    pub chain: Chain,
}

#[derive(Args, Debug)]
#[group(id = "target", multiple = false)]
pub struct VarianceTarget {
    /// Evaluate under a named law.
    #[arg(long, value_enum)]
    pub dist: Option<DistKind>,

    /// Evaluate under Beta(alpha, beta) on each input of u.
    #[arg(long, value_name = "ALPHA,BETA")]
    pub beta: Option<String>,

    /// Build an optimal density: A (reference conditional), B (optimal
    /// conditional) or zero (zero-variance joint density).
    #[arg(long, value_enum)]
    pub case: Option<CaseKind>,
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub u: String,

    #[command(flatten)]
    pub target: VarianceTarget,

    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, conflicts_with = "model")]
    pub data: Option<PathBuf>,

    #[arg(long)]
    pub u: String,

    /// Perturb one input (data mode).
    #[arg(long, conflicts_with = "global")]
    pub marginal: Option<usize>,

    /// Perturb several inputs together (data mode); empty means all.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    pub global: Option<String>,

    #[arg(long, value_name = "LO:HI:COUNT")]
    pub alpha_grid: Option<String>,

    #[arg(long, value_name = "LO:HI:COUNT")]
    pub beta_grid: Option<String>,

    #[arg(long, requires = "upper")]
    pub lower: Option<String>,

    #[arg(long, requires = "lower")]
    pub upper: Option<String>,

    /// Variance over a symmetric Beta grid (model mode).
    #[arg(long, conflicts_with = "cv_curve")]
    pub surface: bool,

    /// Grid used for both Beta parameters of the surface.
    #[arg(long, value_name = "LO:HI:COUNT")]
    pub grid: Option<String>,

    /// CV along the mixture path from the reference to the optimal marginal.
    #[arg(long)]
    pub cv_curve: bool,

    #[arg(long, value_name = "LO:HI:COUNT", default_value = "0:1:11")]
    pub t_grid: String,

    /// Evaluate the CV curve by Monte Carlo with this many draws.
    #[arg(long)]
    pub mc: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub quad: QuadArgs,

    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Seed used by `validate` when none is given.
pub const DEFAULT_VALIDATE_SEED: u64 = 20_240_601;

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub quick: bool,

    #[arg(long, default_value_t = DEFAULT_VALIDATE_SEED)]
    pub seed: u64,

    /// Write the check results as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub n: usize,

    #[arg(long)]
    pub seed: u64,

    /// Sampling law per input, `a1,b1;a2,b2;...`; uniform when omitted.
    #[arg(long)]
    pub theta: Option<String>,

    /// Inputs (one-based) replaced by unobserved noise.
    #[arg(long)]
    pub noise: Option<String>,

    #[arg(long)]
    pub out: PathBuf,
}

/// Configuration problems detected by the CLI itself.
#[derive(Debug)]
pub struct ExitStatus(pub u8);

impl std::fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit status {}", self.0)
    }
}

impl std::error::Error for ExitStatus {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(s) = e.downcast_ref::<ExitStatus>() {
        return s.0;
    }
    match e.downcast_ref::<sobolis::error::Error>() {
        Some(err) if err.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if cli.sequential {
        sobolis::exec::set_parallel(false);
    }
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Variance(a) => commands::variance(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Validate(a) => commands::validate(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if e.downcast_ref::<ExitStatus>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
