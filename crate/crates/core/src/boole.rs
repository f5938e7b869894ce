//! Baseline approximation by Boole's inequality: the joint constraint is split
//! into per-row chance constraints whose risks sum to `1 - β`.
//!
//! ```text
//! Σᵢ (1 − βᵢ) ≤ 1 − β,
//! Mᵢ μ(x) − mᵢ + √(2 Mᵢ Σ Mᵢᵀ) erf⁻¹(2βᵢ − 1) ≤ 0.
//! ```

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{erf_inv, erf_inv_with_derivative, Matrix};
use crate::problem::{normalize_problem, JccpProblem, Solution};
use crate::solver::Nlp;
use crate::spectral::{slack_lower_bound, SLACK_EPS};

/// Deterministic NLP over `z = [x, β₁..β_{n_m}]` with constraints ordered as
/// `[budget (1), per-row (n_m)]`.
#[derive(Clone, Debug)]
pub struct BooleNlp {
    base: JccpProblem,
    /// `√(2 Mᵢ Σ Mᵢᵀ)` per row.
    row_scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BooleCertification {
    pub max_violation: f64,
    pub budget: f64,
    pub bounds: f64,
    pub rows: f64,
}

pub fn build_boole_nlp(p: &JccpProblem) -> Result<BooleNlp> {
    let base = normalize_problem(p);
    let m_mat = base.constraint_matrix();
    let sigma = base.sigma().as_matrix();
    let row_scale = (0..base.n_m())
        .map(|i| {
            let mi = m_mat.row(i);
            let var: f64 = sigma.matvec(mi).iter().zip(mi).map(|(a, b)| a * b).sum();
            (2.0 * var.max(0.0)).sqrt()
        })
        .collect();
    let (n_x, n_m) = (base.n_x(), base.n_m());
    let mut lower = vec![f64::NEG_INFINITY; n_x + n_m];
    let mut upper = vec![f64::INFINITY; n_x + n_m];
    for k in n_x..n_x + n_m {
        lower[k] = slack_lower_bound(base.beta());
        upper[k] = 1.0 - SLACK_EPS;
    }
    Ok(BooleNlp { base, row_scale, lower, upper })
}

impl BooleNlp {
    pub fn problem(&self) -> &JccpProblem {
        &self.base
    }

    pub fn row_scale(&self) -> &[f64] {
        &self.row_scale
    }

    /// `x = 0` and the uniform risk split `βᵢ = 1 − (1 − β)/n_m`.
    pub fn canonical_start(&self) -> Vec<f64> {
        let n_m = self.base.n_m();
        let b = (1.0 - (1.0 - self.base.beta()) / n_m as f64).clamp(SLACK_EPS, 1.0 - SLACK_EPS);
        let mut z = vec![0.0; self.base.n_x()];
        z.extend(std::iter::repeat_n(b, n_m));
        z
    }

    fn row_residuals(&self, z: &[f64]) -> Vec<f64> {
        let n_x = self.base.n_x();
        let means = self.base.constraint_matrix().matvec(&self.base.mean().eval(&z[..n_x]));
        let bound = self.base.constraint_bound();
        (0..self.base.n_m())
            .map(|i| {
                let b = z[n_x + i].clamp(SLACK_EPS, 1.0 - SLACK_EPS);
                let spread = if self.row_scale[i] == 0.0 {
                    0.0
                } else {
                    self.row_scale[i] * erf_inv(2.0 * b - 1.0).expect("clamped slack inside (0, 1)")
                };
                means[i] - bound[i] + spread
            })
            .collect()
    }

    pub fn certify_feasibility(&self, z: &[f64]) -> BooleCertification {
        let n_x = self.base.n_x();
        let slacks = &z[n_x..];
        let budget = (slacks.iter().map(|b| 1.0 - b).sum::<f64>() - (1.0 - self.base.beta())).max(0.0);
        let bounds = slacks.iter().map(|&b| (-b).max(b - 1.0)).fold(0.0f64, f64::max);
        let rows = self.row_residuals(z).into_iter().fold(0.0f64, f64::max);
        BooleCertification { max_violation: budget.max(bounds).max(rows), budget, bounds, rows }
    }

    pub fn certify_solution(&self, sol: &Solution) -> BooleCertification {
        let mut z = sol.x.clone();
        z.extend_from_slice(&sol.slacks);
        self.certify_feasibility(&z)
    }
}

impl Nlp for BooleNlp {
    fn dim(&self) -> usize {
        self.base.n_x() + self.base.n_m()
    }

    fn num_constraints(&self) -> usize {
        1 + self.base.n_m()
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn cost(&self, z: &[f64]) -> f64 {
        self.base.cost_value(&z[..self.base.n_x()])
    }

    fn cost_gradient(&self, z: &[f64]) -> Vec<f64> {
        let n_x = self.base.n_x();
        let mut g = self.base.cost().jacobian(&z[..n_x]).row(0).to_vec();
        g.resize(self.dim(), 0.0);
        g
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        let n_x = self.base.n_x();
        let mut g = Vec::with_capacity(self.num_constraints());
        g.push(z[n_x..].iter().map(|b| 1.0 - b).sum::<f64>() - (1.0 - self.base.beta()));
        g.extend(self.row_residuals(z));
        g
    }

    fn constraint_jacobian(&self, z: &[f64]) -> Matrix<f64> {
        let (n_x, n_m) = (self.base.n_x(), self.base.n_m());
        let mut jac = Matrix::zeros(self.num_constraints(), self.dim());
        for i in 0..n_m {
            jac[(0, n_x + i)] = -1.0;
        }
        let dmean = self.base.constraint_matrix().matmul(&self.base.mean().jacobian(&z[..n_x]));
        for i in 0..n_m {
            jac.row_mut(1 + i)[..n_x].copy_from_slice(dmean.row(i));
            let b = z[n_x + i];
            if self.row_scale[i] != 0.0 && (SLACK_EPS..=1.0 - SLACK_EPS).contains(&b) {
                let (_, d) = erf_inv_with_derivative(2.0 * b - 1.0).expect("slack inside (0, 1)");
                jac[(1 + i, n_x + i)] = 2.0 * self.row_scale[i] * d;
            }
        }
        jac
    }

    fn slack_range(&self) -> Range<usize> {
        self.base.n_x()..self.dim()
    }
}
