//! Spectral safe approximation of a Gaussian joint chance constraint.
//!
//! With `Σ = θ diag(λ) θᵀ` and `M̄ = Mθ`, the decorrelated components of `θᵀφ`
//! are independent, and a point `(x, β¹, β²)` satisfying
//!
//! ```text
//! Πⱼ (βⱼ¹ + βⱼ² − 1) ≥ β,   βⱼ¹ + βⱼ² ≥ 1,   0 ≤ βⱼ^σ ≤ 1,
//! Σⱼ √(2λⱼ) |M̄ᵢⱼ| erf⁻¹(2βⱼ^{σᵢⱼ} − 1) + M̄ᵢ θᵀμ(x) ≤ mᵢ,
//! ```
//!
//! with `σᵢⱼ = 1` if `M̄ᵢⱼ ≥ 0` and `2` otherwise, guarantees `P(Mφ(x) ≤ m) ≥ β`.
//! All spectral quantities are fixed before solving.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{erf_inv, erf_inv_with_derivative, sym_eig, Matrix};
use crate::problem::{normalize_problem, JccpProblem, Solution};
use crate::solver::Nlp;

/// Slack variables live in `[SLACK_EPS, 1 - SLACK_EPS]`, where `erf⁻¹(2β − 1)` is finite.
pub const SLACK_EPS: f64 = 1e-9;

/// Lower bound used for every slack: `max(ε, β)`, capped at `1 − ε`.
///
/// Any feasible point already has each slack at least `β` (every factor of the
/// product, or every per-row risk, is bounded by the total), so the feasible set
/// is unchanged while the region `β < ½`, where `erf⁻¹` turns negative and the
/// programs lose convexity in the slacks, is cut away unless `β` itself is there.
pub fn slack_lower_bound(beta: f64) -> f64 {
    beta.clamp(SLACK_EPS, 1.0 - SLACK_EPS)
}
/// Floor applied to each factor `βⱼ¹ + βⱼ² − 1` (and to `β`) before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;
/// Eigenvalues below `LAMBDA_TOL · max(λ_max, 1)` are treated as exactly zero.
pub const LAMBDA_TOL: f64 = 1e-12;

/// Which slack of pair `j` a constraint row uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlackGroup {
    /// `M̄ᵢⱼ ≥ 0`, uses `βⱼ¹`.
    First,
    /// `M̄ᵢⱼ < 0`, uses `βⱼ²`.
    Second,
}

/// Quantities fixed before solving: rotation, clamped eigenvalues, rotated
/// constraint matrix, slack assignment and the `√(2λⱼ)|M̄ᵢⱼ|` coefficients.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub theta: Matrix<f64>,
    pub lambda: Vec<f64>,
    pub mbar: Matrix<f64>,
    pub sigma_table: Vec<Vec<SlackGroup>>,
    pub coeff: Matrix<f64>,
    /// `M̄ θᵀ`, the map from `μ(x)` to the constraint means.
    mbar_theta_t: Matrix<f64>,
}

impl SpectralData {
    /// Table entry as the index 1 or 2.
    pub fn sigma_index(&self, i: usize, j: usize) -> u8 {
        match self.sigma_table[i][j] {
            SlackGroup::First => 1,
            SlackGroup::Second => 2,
        }
    }
}

pub fn precompute_spectral(p: &JccpProblem) -> Result<SpectralData> {
    let eig = sym_eig(p.sigma())?;
    let lambda_max = eig.lambda.first().copied().unwrap_or(0.0);
    let cutoff = LAMBDA_TOL * lambda_max.max(1.0);
    let lambda: Vec<f64> = eig.lambda.iter().map(|&l| if l < cutoff { 0.0 } else { l }).collect();
    let theta = eig.theta;
    let mbar = p.constraint_matrix().matmul(&theta);
    let (n_m, n_phi) = mbar.shape();
    let mut coeff = Matrix::zeros(n_m, n_phi);
    let mut sigma_table = vec![vec![SlackGroup::First; n_phi]; n_m];
    for i in 0..n_m {
        for j in 0..n_phi {
            let v = mbar[(i, j)];
            sigma_table[i][j] = if v >= 0.0 { SlackGroup::First } else { SlackGroup::Second };
            coeff[(i, j)] = (2.0 * lambda[j]).sqrt() * v.abs();
        }
    }
    let mbar_theta_t = mbar.matmul(&theta.transpose());
    Ok(SpectralData { theta, lambda, mbar, sigma_table, coeff, mbar_theta_t })
}

/// Deterministic NLP over `z = [x, β¹, β²]` with constraints ordered as
/// `[log-product (1), pairing (n_φ), linear (n_m)]`.
#[derive(Clone, Debug)]
pub struct SpectralNlp {
    base: JccpProblem,
    data: SpectralData,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Normalizes `p` if needed and assembles the spectral program.
pub fn build_spectral_nlp(p: &JccpProblem) -> Result<SpectralNlp> {
    let base = normalize_problem(p);
    let data = precompute_spectral(&base)?;
    let (n_x, n_phi) = (base.n_x(), base.n_phi());
    let mut lower = vec![f64::NEG_INFINITY; n_x + 2 * n_phi];
    let mut upper = vec![f64::INFINITY; n_x + 2 * n_phi];
    for k in n_x..n_x + 2 * n_phi {
        lower[k] = slack_lower_bound(base.beta());
        upper[k] = 1.0 - SLACK_EPS;
    }
    Ok(SpectralNlp { base, data, lower, upper })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub max_violation: f64,
    /// `max(0, β − Πⱼ(βⱼ¹ + βⱼ² − 1))`.
    pub product: f64,
    pub pairing: f64,
    pub bounds: f64,
    pub linear: f64,
}

impl SpectralNlp {
    pub fn problem(&self) -> &JccpProblem {
        &self.base
    }

    pub fn data(&self) -> &SpectralData {
        &self.data
    }

    fn n_x(&self) -> usize {
        self.base.n_x()
    }

    fn n_phi(&self) -> usize {
        self.base.n_phi()
    }

    fn first_slacks(&self) -> Range<usize> {
        self.n_x()..self.n_x() + self.n_phi()
    }

    fn second_slacks(&self) -> Range<usize> {
        self.n_x() + self.n_phi()..self.n_x() + 2 * self.n_phi()
    }

    /// Column of `z` holding the slack used by constraint row `i` in direction `j`.
    fn slack_column(&self, i: usize, j: usize) -> usize {
        match self.data.sigma_table[i][j] {
            SlackGroup::First => self.n_x() + j,
            SlackGroup::Second => self.n_x() + self.n_phi() + j,
        }
    }

    /// `x = 0`, and `βⱼ¹ = βⱼ² = (1 + β^{1/n_φ})/2`, which meets the product constraint with equality.
    pub fn canonical_start(&self) -> Vec<f64> {
        let n_phi = self.n_phi() as f64;
        let s = (1.0 + self.base.beta().powf(1.0 / n_phi)) / 2.0;
        let s = s.clamp(SLACK_EPS, 1.0 - SLACK_EPS);
        let mut z = vec![0.0; self.n_x()];
        z.extend(std::iter::repeat_n(s, 2 * self.n_phi()));
        z
    }

    /// Constraint means `M̄ θᵀ μ(x) = M μ(x)`.
    pub fn constraint_means(&self, x: &[f64]) -> Vec<f64> {
        self.data.mbar_theta_t.matvec(&self.base.mean().eval(x))
    }

    fn clamp_slack(b: f64) -> f64 {
        b.clamp(SLACK_EPS, 1.0 - SLACK_EPS)
    }

    fn log_beta(&self) -> f64 {
        self.base.beta().max(LOG_FLOOR).ln()
    }

    /// Linear-constraint residuals given precomputed `erf⁻¹(2β − 1)` for every slack.
    fn linear_residuals(&self, x: &[f64], quantiles: &[f64]) -> Vec<f64> {
        let n_x = self.n_x();
        let means = self.constraint_means(x);
        let bound = self.base.constraint_bound();
        (0..self.base.n_m())
            .map(|i| {
                let spread: f64 = (0..self.n_phi())
                    .map(|j| {
                        let c = self.data.coeff[(i, j)];
                        if c == 0.0 {
                            0.0
                        } else {
                            c * quantiles[self.slack_column(i, j) - n_x]
                        }
                    })
                    .sum();
                spread + means[i] - bound[i]
            })
            .collect()
    }

    fn slack_quantiles(&self, z: &[f64]) -> Vec<f64> {
        z[self.n_x()..]
            .iter()
            .map(|&b| erf_inv(2.0 * Self::clamp_slack(b) - 1.0).expect("clamped slack inside (0, 1)"))
            .collect()
    }

    /// Exact re-check of every constraint at `z`, using the product form of the
    /// confidence constraint rather than its log.
    pub fn certify_feasibility(&self, z: &[f64]) -> CertificationReport {
        let (n_x, n_phi) = (self.n_x(), self.n_phi());
        let b1 = &z[self.first_slacks()];
        let b2 = &z[self.second_slacks()];
        let product: f64 = b1.iter().zip(b2).map(|(a, b)| a + b - 1.0).product();
        let product_violation = (self.base.beta() - product).max(0.0);
        let pairing = b1.iter().zip(b2).map(|(a, b)| 1.0 - a - b).fold(0.0f64, f64::max);
        let bounds = z[n_x..n_x + 2 * n_phi].iter().map(|&b| (-b).max(b - 1.0)).fold(0.0f64, f64::max);
        let linear = self
            .linear_residuals(&z[..n_x], &self.slack_quantiles(z))
            .into_iter()
            .fold(0.0f64, f64::max);
        CertificationReport {
            max_violation: product_violation.max(pairing).max(bounds).max(linear),
            product: product_violation,
            pairing,
            bounds,
            linear,
        }
    }

    pub fn certify_solution(&self, sol: &Solution) -> CertificationReport {
        let mut z = sol.x.clone();
        z.extend_from_slice(&sol.slacks);
        self.certify_feasibility(&z)
    }
}

impl Nlp for SpectralNlp {
    fn dim(&self) -> usize {
        self.n_x() + 2 * self.n_phi()
    }

    fn num_constraints(&self) -> usize {
        1 + self.n_phi() + self.base.n_m()
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn cost(&self, z: &[f64]) -> f64 {
        self.base.cost_value(&z[..self.n_x()])
    }

    fn cost_gradient(&self, z: &[f64]) -> Vec<f64> {
        let n_x = self.n_x();
        let mut g = self.base.cost().jacobian(&z[..n_x]).row(0).to_vec();
        g.resize(self.dim(), 0.0);
        g
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        let n_x = self.n_x();
        let b1 = &z[self.first_slacks()];
        let b2 = &z[self.second_slacks()];
        let mut g = Vec::with_capacity(self.num_constraints());
        let log_sum: f64 = b1.iter().zip(b2).map(|(a, b)| (a + b - 1.0).max(LOG_FLOOR).ln()).sum();
        g.push(self.log_beta() - log_sum);
        g.extend(b1.iter().zip(b2).map(|(a, b)| 1.0 - a - b));
        g.extend(self.linear_residuals(&z[..n_x], &self.slack_quantiles(z)));
        g
    }

    fn constraint_jacobian(&self, z: &[f64]) -> Matrix<f64> {
        let (n_x, n_phi, n_m) = (self.n_x(), self.n_phi(), self.base.n_m());
        let mut jac = Matrix::zeros(self.num_constraints(), self.dim());

        for j in 0..n_phi {
            let s = z[n_x + j] + z[n_x + n_phi + j] - 1.0;
            if s > LOG_FLOOR {
                jac[(0, n_x + j)] = -1.0 / s;
                jac[(0, n_x + n_phi + j)] = -1.0 / s;
            }
            jac[(1 + j, n_x + j)] = -1.0;
            jac[(1 + j, n_x + n_phi + j)] = -1.0;
        }

        let x = &z[..n_x];
        let dmean = self.data.mbar_theta_t.matmul(&self.base.mean().jacobian(x));
        // d/dβ erf⁻¹(2β − 1) = 2 · (erf⁻¹)'(2β − 1); zero outside the box where the slack is clamped
        let slack_slopes: Vec<f64> = z[n_x..]
            .iter()
            .map(|&b| {
                let (_, d) = erf_inv_with_derivative(2.0 * Self::clamp_slack(b) - 1.0)
                    .expect("clamped slack inside (0, 1)");
                if (SLACK_EPS..=1.0 - SLACK_EPS).contains(&b) {
                    2.0 * d
                } else {
                    0.0
                }
            })
            .collect();
        for i in 0..n_m {
            let row = 1 + n_phi + i;
            jac.row_mut(row)[..n_x].copy_from_slice(dmean.row(i));
            for j in 0..n_phi {
                let c = self.data.coeff[(i, j)];
                if c != 0.0 {
                    let col = self.slack_column(i, j);
                    jac[(row, col)] += c * slack_slopes[col - n_x];
                }
            }
        }
        jac
    }

    fn slack_range(&self) -> Range<usize> {
        self.n_x()..self.dim()
    }
}
