//! End-to-end pipeline: build an approximation, solve it, certify the answer and
//! optionally validate it by simulation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boole::build_boole_nlp;
use crate::error::{Error, Result};
use crate::gauss_markov::Example;
use crate::monte_carlo::{simulate_batch, MonteCarloReport};
use crate::problem::{JccpProblem, Solution, SolveStatus};
use crate::solver::{check_gradients, multistart_solve, SolveTrace, SolverOptions};
use crate::spectral::build_spectral_nlp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Spectral,
    Boole,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Spectral, Method::Boole];

    pub fn name(self) -> &'static str {
        match self {
            Method::Spectral => "spectral",
            Method::Boole => "boole",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Method::Spectral),
            "boole" => Ok(Method::Boole),
            other => Err(Error::Parse(format!("unknown method '{other}' (expected spectral or boole)"))),
        }
    }
}

/// A solved and certified approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub method: Method,
    pub solution: Solution,
    /// Largest violation of the approximation's constraints, re-evaluated exactly
    /// (the spectral product constraint in product form).
    pub certified_violation: f64,
    pub seconds: f64,
    pub trace: SolveTrace,
}

impl SolveOutcome {
    /// Converged, and the certificate confirms feasibility to `cons_tol`.
    pub fn certified(&self, cons_tol: f64) -> bool {
        self.solution.status == SolveStatus::Converged && self.certified_violation <= cons_tol
    }
}

/// Builds the chosen approximation of `problem`, multistart-solves it from the
/// canonical start and certifies the result.
pub fn solve_problem(problem: &JccpProblem, method: Method, opts: &SolverOptions) -> Result<SolveOutcome> {
    let start = Instant::now();
    let (solution, trace, certified_violation) = match method {
        Method::Spectral => {
            let nlp = build_spectral_nlp(problem)?;
            let (sol, trace) = multistart_solve(&nlp, &nlp.canonical_start(), opts)?;
            let cert = nlp.certify_solution(&sol).max_violation;
            (sol, trace, cert)
        }
        Method::Boole => {
            let nlp = build_boole_nlp(problem)?;
            let (sol, trace) = multistart_solve(&nlp, &nlp.canonical_start(), opts)?;
            let cert = nlp.certify_solution(&sol).max_violation;
            (sol, trace, cert)
        }
    };
    Ok(SolveOutcome { method, solution, certified_violation, seconds: start.elapsed().as_secs_f64(), trace })
}

/// Largest relative analytic-vs-finite-difference derivative error of the chosen
/// approximation, at its canonical start.
pub fn gradient_error(problem: &JccpProblem, method: Method) -> Result<f64> {
    const STEP: f64 = 1e-5;
    Ok(match method {
        Method::Spectral => {
            let nlp = build_spectral_nlp(problem)?;
            check_gradients(&nlp, &nlp.canonical_start(), STEP)
        }
        Method::Boole => {
            let nlp = build_boole_nlp(problem)?;
            check_gradients(&nlp, &nlp.canonical_start(), STEP)
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRun {
    pub example: Example,
    pub beta: f64,
    pub outcome: SolveOutcome,
    pub monte_carlo: Option<MonteCarloReport>,
}

/// Solves one of the built-in examples and, when `mc_runs > 0`, simulates the
/// optimal input sequence `mc_runs` times from `seed`.
pub fn run_example(example: Example, beta: f64, method: Method, opts: &SolverOptions, mc_runs: usize, seed: u64) -> Result<ExampleRun> {
    let (model, spec, problem) = example.build(beta)?;
    let outcome = solve_problem(&problem, method, opts)?;
    let monte_carlo = if mc_runs > 0 {
        Some(simulate_batch(&model, &spec, &outcome.solution.x, mc_runs, seed)?)
    } else {
        None
    };
    Ok(ExampleRun { example, beta, outcome, monte_carlo })
}
