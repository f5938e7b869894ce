//! Joint chance-constrained programs with additive Gaussian uncertainty.
//!
//! A problem `min J(x)` subject to `P(Mφ ≤ m) ≥ β`, `φ ~ N(μ(x), Σ)`, is replaced by a
//! deterministic smooth program whose feasible points all satisfy the chance
//! constraint. Two such approximations are provided:
//!
//! - [`spectral`]: decorrelates `φ` through the eigendecomposition of `Σ` and splits
//!   the confidence level across eigen-directions;
//! - [`boole`]: the union-bound risk allocation across constraint rows.
//!
//! Both are solved by the augmented Lagrangian method in [`solver`]. [`gauss_markov`]
//! builds problems from linear Gaussian-Markov control models, and [`monte_carlo`]
//! checks solutions by simulation.
//!
//! ```no_run
//! use jccp::{experiment::{run_example, Method}, gauss_markov::Example, SolverOptions};
//!
//! let run = run_example(Example::MassSpring, 0.8, Method::Spectral, &SolverOptions::default(), 10_000, 42)?;
//! println!("J = {}, beta_hat = {}", run.outcome.solution.cost_value, run.monte_carlo.unwrap().beta_hat);
//! # Ok::<(), jccp::Error>(())
//! ```

// comparisons are written so that NaN falls on the rejecting side
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boole;
pub mod error;
pub mod experiment;
pub mod gauss_markov;
pub mod monte_carlo;
pub mod numerics;
pub mod problem;
pub mod scalar;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use experiment::{run_example, solve_problem, ExampleRun, Method, SolveOutcome};
pub use gauss_markov::{Example, GaussMarkovModel, HorizonSpec};
pub use monte_carlo::{simulate_batch, MonteCarloReport};
pub use problem::{load_problem, normalize_problem, serialize_problem, JccpProblem, Solution, SolveStatus};
pub use scalar::Scalar;
pub use solver::{Nlp, SolverOptions};

/// Dense `f64` matrix.
pub type Mat = numerics::Matrix<f64>;
/// Symmetric `f64` matrix.
pub type SymMat = numerics::SymMatrix<f64>;
/// `f64` eigendecomposition.
pub type Eigen = numerics::EigenPair<f64>;
