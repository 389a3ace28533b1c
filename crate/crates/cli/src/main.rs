//! Experiment harness for the bandit multiclass PAC learner.
//!
//! Subcommands: `generate` synthetic instances, `learn` the two-phase
//! learner over a seed range, `baseline` uniform exploration, `fw-bench`
//! per-round exact suboptimality of the optimizer, `cover` the
//! pattern-cover reduction, and `verify` the invariant suite.
//!
//! Exit codes: 0 success, 2 validation, 3 phase-1 budget exhaustion,
//! 4 invariant failure, 1 anything else.

mod harness;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use banditpac::learner::LearnError;

pub const EXIT_GENERIC: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// A failure carrying its process exit code.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn generic(message: impl Into<String>) -> Self {
        Self { code: EXIT_GENERIC, message: message.into() }
    }

    pub fn from_learn(err: LearnError) -> Self {
        let code = match &err {
            LearnError::BudgetExhausted { .. } => EXIT_BUDGET,
            LearnError::InvalidParameter { .. } | LearnError::SampleScaleExceeded { .. } => {
                EXIT_VALIDATION
            }
            LearnError::Env(_) | LearnError::Fw(_) => EXIT_GENERIC,
        };
        Self { code, message: err.to_string() }
    }
}

pub fn build_id() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("GIT_DESCRIBE"))
}

#[derive(Parser)]
#[command(name = "banditpac", version, about = "Bandit multiclass PAC learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance file.
    Generate(GenerateArgs),
    /// Run the two-phase learner per seed; write reports and a CSV.
    Learn(RunArgs),
    /// Run the uniform-exploration baseline per seed.
    Baseline(RunArgs),
    /// Per-round exact suboptimality of the stochastic optimizer.
    FwBench(FwBenchArgs),
    /// Learn through a pattern cover of the class.
    Cover(RunArgs),
    /// Run the invariant verification suite.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
pub struct GenerateArgs {
    /// Destination file.
    #[arg(long)]
    pub out: PathBuf,
    /// planted | random | rational
    #[arg(long, default_value = "planted")]
    pub kind: String,
    /// Distinct examples.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    /// Labels.
    #[arg(long, default_value_t = 3)]
    pub k: u32,
    /// Hypotheses.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Noise rate of the planted hypothesis.
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// Instance file (JSON).
    #[arg(long)]
    pub instance: PathBuf,
    /// Optional JSON config supplying defaults; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Target excess loss.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Failure probability.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Exploration mixture weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// theory | practical
    #[arg(long)]
    pub mode: Option<String>,
    /// Seed range `a..b` (half-open) or a single seed.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory for per-run JSON and the aggregate CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Phase-1 dataset size multiplier (practical mode).
    #[arg(long)]
    pub c1: Option<f64>,
    /// Bernstein-branch constant in the phase-2 round count.
    #[arg(long)]
    pub c2: Option<f64>,
    /// Baseline round-count multiplier.
    #[arg(long)]
    pub cb: Option<f64>,
    /// Cover sample-size constant.
    #[arg(long)]
    pub cs: Option<f64>,
    /// Optimizer round-cap multiplier (practical mode).
    #[arg(long)]
    pub t_mult: Option<f64>,
    /// Refuse runs needing more environment samples than this.
    #[arg(long)]
    pub sample_cap: Option<u64>,
    /// Cover dimension override (cover subcommand).
    #[arg(long)]
    pub dn: Option<u32>,
}

#[derive(Args, Clone)]
pub struct FwBenchArgs {
    /// Instance file (JSON); its support must tile exactly.
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1024)]
    pub rounds: usize,
    /// Reset-round batch multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination CSV: t, exact suboptimality, support size.
    #[arg(long, default_value = "fw_bench.csv")]
    pub out: PathBuf,
    /// Optional per-round schedule diagnostics CSV.
    #[arg(long)]
    pub diag: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => harness::cmd_generate(&args),
        Command::Learn(args) => harness::cmd_learn(&args),
        Command::Baseline(args) => harness::cmd_baseline(&args),
        Command::FwBench(args) => harness::cmd_fw_bench(&args),
        Command::Cover(args) => harness::cmd_cover(&args),
        Command::Verify(args) => harness::cmd_verify(&args),
    };
    if let Err(failure) = result {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
