//! Seeded Monte Carlo validation of open-loop input sequences.
//!
//! Every run draws from its own ChaCha8 stream, `seed_from_u64(seed)` with the
//! stream set to the run index, so results do not depend on how runs are
//! scheduled across threads. Runs are folded in fixed-size chunks and the chunk
//! summaries are combined in run order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_markov::{realized_cost, simulate, GaussMarkovModel, HorizonSpec};
use crate::numerics::{sym_eig, Matrix, SymMatrix};
use crate::problem::{check_psd, JccpProblem};

/// Runs per reduction chunk. Fixed so the floating-point summation order is too.
const CHUNK: usize = 256;

/// Draws from `N(0, Σ)` as `L z` with `L = θ diag(√λ₊)` from the eigendecomposition,
/// which also covers singular covariances. `z` comes from `rand_distr::StandardNormal`
/// (ziggurat sampling).
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    factor: Matrix<f64>,
    zero: bool,
}

impl GaussianSampler {
    pub fn new(cov: &SymMatrix<f64>) -> Result<Self> {
        check_psd(cov, "covariance")?;
        let eig = sym_eig(cov)?;
        let n = cov.dim();
        let mut factor = eig.theta;
        for (j, &l) in eig.lambda.iter().enumerate() {
            let s = l.max(0.0).sqrt();
            for i in 0..n {
                factor[(i, j)] *= s;
            }
        }
        let zero = factor.as_slice().iter().all(|&v| v == 0.0);
        Ok(Self { factor, zero })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    /// One draw. A zero covariance consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.zero {
            return vec![0.0; self.dim()];
        }
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.matvec(&z)
    }
}

/// One draw from `N(0, cov)`. Build a [`GaussianSampler`] when drawing repeatedly.
pub fn gaussian_sample<R: Rng + ?Sized>(cov: &SymMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    Ok(GaussianSampler::new(cov)?.sample(rng))
}

/// Per-output, per-time statistics over all runs, for `t = 1..N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEnvelope {
    pub output: usize,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub seed: u64,
    /// Fraction of runs with `y_t ≤ y_max` for every `t = 1..N`.
    pub beta_hat: f64,
    /// `√(β̄(1 − β̄)/runs)`.
    pub beta_hat_stderr: f64,
    pub mean_realized_cost: f64,
    /// Sample standard deviation of the realized cost.
    pub cost_std: f64,
    pub envelopes: Vec<OutputEnvelope>,
    /// Satisfaction flag of each run, in run order.
    pub satisfied: Vec<bool>,
}

impl MonteCarloReport {
    /// Standard error of `mean_realized_cost`.
    pub fn cost_stderr(&self) -> f64 {
        self.cost_std / (self.runs as f64).sqrt()
    }
}

fn run_stream(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

struct Partial {
    satisfied: Vec<bool>,
    cost_sum: f64,
    cost_sq: f64,
    y_sum: Vec<f64>,
    y_lo: Vec<f64>,
    y_hi: Vec<f64>,
}

impl Partial {
    fn new(len: usize) -> Self {
        Self {
            satisfied: Vec::new(),
            cost_sum: 0.0,
            cost_sq: 0.0,
            y_sum: vec![0.0; len],
            y_lo: vec![f64::INFINITY; len],
            y_hi: vec![f64::NEG_INFINITY; len],
        }
    }

    fn merge(mut self, other: Partial) -> Self {
        self.satisfied.extend(other.satisfied);
        self.cost_sum += other.cost_sum;
        self.cost_sq += other.cost_sq;
        for k in 0..self.y_sum.len() {
            self.y_sum[k] += other.y_sum[k];
            self.y_lo[k] = self.y_lo[k].min(other.y_lo[k]);
            self.y_hi[k] = self.y_hi[k].max(other.y_hi[k]);
        }
        self
    }
}

/// Simulates `runs` trajectories of the model under the input sequence `u`
/// (`u_0..u_{N-1}` stacked), with `x_0 ~ N(x̄₀, Σ_x)` and i.i.d. `w_t ~ N(0, Σ_w)`.
pub fn simulate_batch(
    model: &GaussMarkovModel,
    spec: &HorizonSpec,
    u: &[f64],
    runs: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(Error::Validation("Monte Carlo needs at least one run".into()));
    }
    model.validate()?;
    spec.validate(model)?;
    let (p, r, n) = (model.n_input(), model.n_output(), spec.n);
    if u.len() != p * n {
        return Err(Error::Dimension(format!("input sequence has {} entries, expected {}", u.len(), p * n)));
    }
    let x0_sampler = GaussianSampler::new(&model.x0_cov)?;
    let w_sampler = GaussianSampler::new(&model.w_cov)?;

    let one_run = |run: usize| {
        let mut rng = run_stream(seed, run);
        let mut x0 = x0_sampler.sample(&mut rng);
        x0.iter_mut().zip(&model.x0_mean).for_each(|(a, b)| *a += b);
        let w: Vec<Vec<f64>> = (0..=n).map(|_| w_sampler.sample(&mut rng)).collect();
        let (states, outputs) = simulate(model, u, &x0, &w);
        let ok = outputs.iter().all(|y| y.iter().zip(&spec.y_max).all(|(a, b)| a <= b));
        (ok, realized_cost(spec, &states, u), outputs)
    };

    let chunks: Vec<Partial> = (0..runs.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Partial::new(r * n);
            for run in c * CHUNK..((c + 1) * CHUNK).min(runs) {
                let (ok, cost, outputs) = one_run(run);
                acc.satisfied.push(ok);
                acc.cost_sum += cost;
                acc.cost_sq += cost * cost;
                for (k, y) in outputs.iter().flatten().enumerate() {
                    acc.y_sum[k] += y;
                    acc.y_lo[k] = acc.y_lo[k].min(*y);
                    acc.y_hi[k] = acc.y_hi[k].max(*y);
                }
            }
            acc
        })
        .collect();
    let total = chunks.into_iter().fold(Partial::new(r * n), Partial::merge);

    let count = runs as f64;
    let beta_hat = total.satisfied.iter().filter(|&&s| s).count() as f64 / count;
    let mean_cost = total.cost_sum / count;
    let var = if runs > 1 { ((total.cost_sq - count * mean_cost * mean_cost) / (count - 1.0)).max(0.0) } else { 0.0 };
    let envelopes = (0..r)
        .map(|o| {
            let idx = |t: usize| t * r + o;
            OutputEnvelope {
                output: o,
                // clamped so round-off never puts the mean outside [lo, hi]
                mean: (0..n).map(|t| (total.y_sum[idx(t)] / count).clamp(total.y_lo[idx(t)], total.y_hi[idx(t)])).collect(),
                lo: (0..n).map(|t| total.y_lo[idx(t)]).collect(),
                hi: (0..n).map(|t| total.y_hi[idx(t)]).collect(),
            }
        })
        .collect();
    Ok(MonteCarloReport {
        runs,
        seed,
        beta_hat,
        beta_hat_stderr: (beta_hat * (1.0 - beta_hat) / count).sqrt(),
        mean_realized_cost: mean_cost,
        cost_std: var.sqrt(),
        envelopes,
        satisfied: total.satisfied,
    })
}

/// Sample estimate of `P(Mφ ≤ m)` for `φ ~ N(μ(x), Σ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub samples: usize,
    pub p_hat: f64,
    pub stderr: f64,
}

/// Estimates the joint satisfaction probability of `problem` at decision `x`
/// from `samples` draws, seeded like [`simulate_batch`].
pub fn estimate_joint_probability(problem: &JccpProblem, x: &[f64], samples: usize, seed: u64) -> Result<ProbabilityEstimate> {
    if samples == 0 {
        return Err(Error::Validation("probability estimate needs at least one sample".into()));
    }
    if x.len() != problem.n_x() {
        return Err(Error::Dimension(format!("x has {} entries, problem has {}", x.len(), problem.n_x())));
    }
    let sampler = GaussianSampler::new(problem.sigma())?;
    let mean = problem.mean().eval(x);
    let (m_mat, bound) = (problem.constraint_matrix(), problem.constraint_bound());
    let hits: usize = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(samples))
                .filter(|&k| {
                    let mut rng = run_stream(seed, k);
                    let mut phi = sampler.sample(&mut rng);
                    phi.iter_mut().zip(&mean).for_each(|(a, b)| *a += b);
                    m_mat.matvec(&phi).iter().zip(bound).all(|(a, b)| a <= b)
                })
                .count()
        })
        .sum();
    let p_hat = hits as f64 / samples as f64;
    Ok(ProbabilityEstimate { samples, p_hat, stderr: (p_hat * (1.0 - p_hat) / samples as f64).sqrt() })
}
