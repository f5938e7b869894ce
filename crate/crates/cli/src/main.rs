//! `jccp`: solve, validate and export joint chance-constrained programs.
//!
//! Exit codes: 0 success, 1 parse/validation/IO error, 2 solver did not converge
//! (outputs are still written), 3 derivative check failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(#[from] jccp::Error),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

/// Outcome of a command that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Finish {
    Ok,
    NotConverged,
    GradientFailure,
}

impl Finish {
    fn code(self) -> u8 {
        match self {
            Finish::Ok => 0,
            Finish::NotConverged => 2,
            Finish::GradientFailure => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "jccp", version, about = "Safe analytical approximations of Gaussian joint chance-constrained programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a problem file.
    Solve(SolveArgs),
    /// Solve one of the built-in control examples and simulate the result.
    Example(ExampleArgs),
    /// Solve a built-in example over a grid of confidence levels.
    Sweep(SweepArgs),
    /// Compare analytic derivatives with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a built-in example as a problem file.
    Emit(EmitArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Spectral,
    Boole,
}

impl From<MethodArg> for jccp::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Spectral => jccp::Method::Spectral,
            MethodArg::Boole => jccp::Method::Boole,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Spectral,
    Boole,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<jccp::Method> {
        match self {
            MethodChoice::Spectral => vec![jccp::Method::Spectral],
            MethodChoice::Boole => vec![jccp::Method::Boole],
            MethodChoice::Both => jccp::Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExampleArg {
    MassSpring,
    F16,
}

impl From<ExampleArg> for jccp::Example {
    fn from(e: ExampleArg) -> Self {
        match e {
            ExampleArg::MassSpring => jccp::Example::MassSpring,
            ExampleArg::F16 => jccp::Example::F16,
        }
    }
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value = "spectral")]
    pub method: MethodArg,
    /// Samples for the Monte Carlo estimate of the joint probability (0 skips it).
    #[arg(long, default_value_t = 10_000)]
    pub mc_runs: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExampleArgs {
    #[arg(long, value_enum)]
    pub name: ExampleArg,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "both")]
    pub method: MethodChoice,
    /// Simulated trajectories per method (0 skips the simulation).
    #[arg(long, default_value_t = 10_000)]
    pub mc_runs: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub name: ExampleArg,
    /// Grid `lo:hi:step`; `hi` is included even when it is off the step grid.
    #[arg(long, default_value = "0.5:0.99:0.05")]
    pub betas: String,
    #[arg(long, value_enum, default_value = "both")]
    pub method: MethodChoice,
    #[arg(long, default_value_t = 10_000)]
    pub mc_runs: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["problem", "example"])))]
pub struct GradcheckArgs {
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub example: Option<ExampleArg>,
    /// Confidence level used to build an example.
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "spectral")]
    pub method: MethodArg,
    /// Test hook: perturb one Jacobian entry so the check must fail.
    #[arg(long, hide = true)]
    pub corrupt_jacobian: bool,
}

#[derive(Args, Debug)]
pub struct EmitArgs {
    #[arg(long, value_enum)]
    pub name: ExampleArg,
    #[arg(long)]
    pub beta: f64,
    /// Output directory (receives `problem_<name>.json`); standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Example(a) => commands::example(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Emit(a) => commands::emit(&a),
    };
    match result {
        Ok(finish) => ExitCode::from(finish.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
