//! Smooth inequality-constrained NLP solver.
//!
//! Outer loop: augmented Lagrangian with the squared-hinge (PHR) treatment of
//! `g(z) <= 0`. Inner loop: projected L-BFGS over the box bounds.

mod nnls;
mod projected_lbfgs;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::problem::{Solution, SolveStatus};

use nnls::nnls;
use projected_lbfgs::{fd_hessian, minimize, project, projected_gradient_norm};

/// A smooth nonlinear program `min f(z) s.t. g(z) <= 0, lower <= z <= upper`.
pub trait Nlp: Sync {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn cost(&self, z: &[f64]) -> f64;
    fn cost_gradient(&self, z: &[f64]) -> Vec<f64>;
    /// Residuals `g(z)`; feasible iff every entry is `<= 0`.
    fn constraints(&self, z: &[f64]) -> Vec<f64>;
    /// `num_constraints × dim` Jacobian of `g`.
    fn constraint_jacobian(&self, z: &[f64]) -> Matrix<f64>;

    /// Positions of the auxiliary slack variables. Everything before them is the
    /// original decision vector `x`.
    fn slack_range(&self) -> Range<usize> {
        self.dim()..self.dim()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub cons_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub multistart_count: usize,
    pub seed: u64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Penalty grows unless infeasibility shrinks by at least this factor.
    pub violation_decrease: f64,
    pub lbfgs_memory: usize,
    /// Precondition the inner quasi-Newton iteration with a generalized Hessian of
    /// the merit function (finite differences of the Lagrangian gradient plus the
    /// penalty's Gauss-Newton term).
    pub precondition: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            cons_tol: 1e-8,
            max_outer: 50,
            max_inner: 500,
            multistart_count: 5,
            seed: 42,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            violation_decrease: 0.25,
            lbfgs_memory: 10,
            precondition: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kkt_tol", self.kkt_tol),
            ("cons_tol", self.cons_tol),
            ("initial_penalty", self.initial_penalty),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::Validation("penalty_growth must exceed 1".into()));
        }
        if !(self.violation_decrease > 0.0 && self.violation_decrease < 1.0) {
            return Err(Error::Validation("violation_decrease must lie in (0, 1)".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.multistart_count == 0 || self.lbfgs_memory == 0 {
            return Err(Error::Validation("iteration counts and memory must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub cost: f64,
    pub max_violation: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
    /// Projected-gradient norm of the merit function when the inner solve stopped.
    pub inner_gradient: f64,
    /// Whether this iterate's violation is no larger than every earlier one.
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<OuterRecord>,
}

impl SolveTrace {
    pub fn accepted_violations(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().filter(|r| r.accepted).map(|r| r.max_violation)
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::Evaluation { what, index }),
        None => Ok(()),
    }
}

/// Largest gradient entry allowed after scaling.
const SCALE_TARGET: f64 = 100.0;

fn scale_factor(row: &[f64]) -> f64 {
    let norm = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if norm > SCALE_TARGET && norm.is_finite() {
        SCALE_TARGET / norm
    } else {
        1.0
    }
}

/// Cost and each constraint multiplied by `min(1, 100 / ‖∇‖_∞)` measured at the start.
struct Scaled<'a, N: Nlp + ?Sized> {
    inner: &'a N,
    cost: f64,
    rows: Vec<f64>,
}

impl<N: Nlp + ?Sized> Nlp for Scaled<'_, N> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn lower(&self) -> &[f64] {
        self.inner.lower()
    }
    fn upper(&self) -> &[f64] {
        self.inner.upper()
    }
    fn cost(&self, z: &[f64]) -> f64 {
        self.cost * self.inner.cost(z)
    }
    fn cost_gradient(&self, z: &[f64]) -> Vec<f64> {
        self.inner.cost_gradient(z).into_iter().map(|v| self.cost * v).collect()
    }
    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        self.inner.constraints(z).into_iter().zip(&self.rows).map(|(g, s)| g * s).collect()
    }
    fn constraint_jacobian(&self, z: &[f64]) -> Matrix<f64> {
        let mut jac = self.inner.constraint_jacobian(z);
        for (i, &s) in self.rows.iter().enumerate() {
            jac.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        jac
    }
    fn slack_range(&self) -> Range<usize> {
        self.inner.slack_range()
    }
}

/// Stationarity of the Lagrangian, relative to `max(1, ‖∇f‖_∞)`, combined with
/// complementarity `max_i |min(λ_i, -g_i)|`.
fn kkt_residual_with<N: Nlp + ?Sized>(nlp: &N, z: &[f64], grad_f: &[f64], jac: &Matrix<f64>, g: &[f64], lam: &[f64]) -> f64 {
    let mut grad_l = grad_f.to_vec();
    for (i, &l) in lam.iter().enumerate() {
        if l != 0.0 {
            for (gl, &j) in grad_l.iter_mut().zip(jac.row(i)) {
                *gl += l * j;
            }
        }
    }
    let scale = grad_f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let stationarity = projected_gradient_norm(z, &grad_l, nlp.lower(), nlp.upper()) / scale;
    let complementarity = lam.iter().zip(g).map(|(&l, &gi)| l.min(-gi).abs()).fold(0.0, f64::max);
    stationarity.max(complementarity)
}

/// Least-squares multipliers: `λ ≥ 0` on the constraints with `g_i ≥ -active_tol`,
/// fitted to `∇f + Jᵀλ = 0` over the coordinates strictly inside the box.
fn least_squares_multipliers<N: Nlp + ?Sized>(
    nlp: &N,
    z: &[f64],
    grad_f: &[f64],
    jac: &Matrix<f64>,
    g: &[f64],
    active_tol: f64,
) -> Vec<f64> {
    let (lower, upper) = (nlp.lower(), nlp.upper());
    let active: Vec<usize> = (0..g.len()).filter(|&i| g[i] >= -active_tol).collect();
    let interior: Vec<usize> = (0..z.len()).filter(|&k| z[k] > lower[k] && z[k] < upper[k]).collect();
    let mut lam = vec![0.0; g.len()];
    if active.is_empty() || interior.is_empty() {
        return lam;
    }
    let mut a = Matrix::zeros(interior.len(), active.len());
    for (r, &k) in interior.iter().enumerate() {
        for (c, &i) in active.iter().enumerate() {
            a[(r, c)] = jac[(i, k)];
        }
    }
    let b: Vec<f64> = interior.iter().map(|&k| -grad_f[k]).collect();
    for (&i, v) in active.iter().zip(nnls(&a, &b)) {
        lam[i] = v;
    }
    lam
}

/// KKT residual at `z`: the better of the given multiplier estimate and a
/// least-squares fit. Either is a valid certificate, since the residual is an
/// infimum over `λ ≥ 0`.
fn kkt_residual<N: Nlp + ?Sized>(
    nlp: &N,
    z: &[f64],
    grad_f: &[f64],
    jac: &Matrix<f64>,
    g: &[f64],
    lam: &[f64],
    active_tol: f64,
) -> f64 {
    let given = kkt_residual_with(nlp, z, grad_f, jac, g, lam);
    if given == 0.0 {
        return given;
    }
    let fitted = least_squares_multipliers(nlp, z, grad_f, jac, g, active_tol);
    let r = kkt_residual_with(nlp, z, grad_f, jac, g, &fitted);
    given.min(r)
}

struct Evaluated {
    grad_f: Vec<f64>,
    g: Vec<f64>,
    jac: Matrix<f64>,
}

fn evaluate<N: Nlp + ?Sized>(nlp: &N, z: &[f64]) -> Result<Evaluated> {
    if !nlp.cost(z).is_finite() {
        return Err(Error::Evaluation { what: "cost", index: 0 });
    }
    let grad_f = nlp.cost_gradient(z);
    check_finite(&grad_f, "cost gradient")?;
    let g = nlp.constraints(z);
    check_finite(&g, "constraint")?;
    let jac = nlp.constraint_jacobian(z);
    for i in 0..jac.rows() {
        if jac.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "constraint jacobian row", index: i });
        }
    }
    Ok(Evaluated { grad_f, g, jac })
}

/// Solves `nlp` from `z0` (projected onto the box first).
///
/// Returns `MaxIter` rather than an error when the iteration budget runs out; the
/// returned point is the best one seen (smallest violation, then lowest cost).
pub fn solve<N: Nlp + ?Sized>(nlp: &N, z0: &[f64], opts: &SolverOptions) -> Result<(Solution, SolveTrace)> {
    opts.validate()?;
    let n = nlp.dim();
    if z0.len() != n {
        return Err(Error::Dimension(format!("start has {} entries, nlp has {n}", z0.len())));
    }
    let (lower, upper) = (nlp.lower(), nlp.upper());
    let mut z = z0.to_vec();
    project(&mut z, lower, upper);

    let m = nlp.num_constraints();
    let mut lam = vec![0.0; m];
    let mut rho = opts.initial_penalty;
    let mut trace = SolveTrace::default();

    let first = evaluate(nlp, &z)?;
    let scaled = Scaled {
        inner: nlp,
        cost: scale_factor(&first.grad_f),
        rows: (0..m).map(|i| scale_factor(first.jac.row(i))).collect(),
    };
    let unscaled_violation = |g: &[f64]| g.iter().zip(&scaled.rows).fold(0.0f64, |a, (v, s)| a.max(v / s));
    let nlp_outer = nlp;
    let nlp = &scaled;
    let grad_scale = first.grad_f.iter().fold(0.0f64, |a, v| a.max(v.abs())) * scaled.cost;
    let grad_scale = grad_scale.max(1.0);
    let mut prev_infeas = f64::INFINITY;
    let mut inner_tol = 1e-2 * grad_scale;
    let mut best: Option<(Vec<f64>, f64, f64, f64)> = None; // (z, violation, cost, kkt)
    let mut min_violation = f64::INFINITY;

    for _outer in 0..opts.max_outer {
        let lam_ref = &lam;
        let merit = |zz: &[f64], grad: &mut [f64]| -> Result<f64> {
            // non-finite values at trial points make the line search back off;
            // accepted points are re-checked by `evaluate`
            let f = nlp.cost(zz);
            let gf = nlp.cost_gradient(zz);
            let g = nlp.constraints(zz);
            if !f.is_finite() || gf.iter().chain(&g).any(|v| !v.is_finite()) {
                return Ok(f64::INFINITY);
            }
            grad.copy_from_slice(&gf);
            let mut value = f;
            let mut weights = vec![0.0; g.len()];
            for (i, (&gi, &li)) in g.iter().zip(lam_ref).enumerate() {
                let shifted = (li + rho * gi).max(0.0);
                value += (shifted * shifted - li * li) / (2.0 * rho);
                weights[i] = shifted;
            }
            if weights.iter().any(|&w| w > 0.0) {
                let jac = nlp.constraint_jacobian(zz);
                for (i, &w) in weights.iter().enumerate() {
                    if w > 0.0 {
                        let row = jac.row(i);
                        if row.iter().any(|v| !v.is_finite()) {
                            return Ok(f64::INFINITY);
                        }
                        for (gr, &j) in grad.iter_mut().zip(row) {
                            *gr += w * j;
                        }
                    }
                }
            }
            Ok(value)
        };
        // generalized Hessian of the merit: finite differences of the Lagrangian
        // gradient with the hinge weights frozen, plus the exact ρ Jᵢᵀ Jᵢ terms
        let mut hessian = |zz: &[f64]| -> Result<Matrix<f64>> {
            let g = nlp.constraints(zz);
            let weights: Vec<f64> = g.iter().zip(lam_ref).map(|(&gi, &li)| (li + rho * gi).max(0.0)).collect();
            let mut lagrangian_gradient = |y: &[f64], out: &mut [f64]| -> Result<f64> {
                out.copy_from_slice(&nlp.cost_gradient(y));
                if weights.iter().any(|&w| w > 0.0) {
                    let jac = nlp.constraint_jacobian(y);
                    for (i, &w) in weights.iter().enumerate().filter(|(_, &w)| w > 0.0) {
                        out.iter_mut().zip(jac.row(i)).for_each(|(o, &j)| *o += w * j);
                    }
                }
                Ok(if out.iter().all(|v| v.is_finite()) { 0.0 } else { f64::INFINITY })
            };
            let mut g0 = vec![0.0; zz.len()];
            lagrangian_gradient(zz, &mut g0)?;
            let mut h = fd_hessian(&mut lagrangian_gradient, zz, &g0, lower, upper)?;
            if weights.iter().any(|&w| w > 0.0) {
                let jac = nlp.constraint_jacobian(zz);
                for (i, _) in weights.iter().enumerate().filter(|(_, &w)| w > 0.0) {
                    let row = jac.row(i);
                    for a in 0..row.len() {
                        if row[a] != 0.0 {
                            for b in 0..row.len() {
                                h[(a, b)] += rho * row[a] * row[b];
                            }
                        }
                    }
                }
            }
            Ok(h)
        };
        let model: Option<&mut projected_lbfgs::HessianFn<'_>> = if opts.precondition { Some(&mut hessian) } else { None };
        let inner = minimize(merit, &z, lower, upper, inner_tol, opts.max_inner, opts.lbfgs_memory, model)?;
        z = inner.x;

        let ev = evaluate(nlp, &z)?;
        let violation = unscaled_violation(&ev.g);
        let cost = nlp_outer.cost(&z);
        let lam_new: Vec<f64> = lam.iter().zip(&ev.g).map(|(&l, &gi)| (l + rho * gi).max(0.0)).collect();
        let kkt = kkt_residual(nlp, &z, &ev.grad_f, &ev.jac, &ev.g, &lam_new, opts.kkt_tol);

        let better = match &best {
            None => true,
            Some((_, bv, bc, _)) => {
                let tol = opts.cons_tol;
                if violation <= tol && *bv <= tol {
                    cost <= *bc
                } else {
                    violation <= *bv
                }
            }
        };
        let accepted = violation <= min_violation;
        min_violation = min_violation.min(violation);
        trace.records.push(OuterRecord {
            cost,
            max_violation: violation,
            penalty: rho,
            inner_iterations: inner.iterations,
            inner_gradient: inner.pg_norm,
            accepted,
        });
        if better {
            best = Some((z.clone(), violation, cost, kkt));
        }

        if violation <= opts.cons_tol && kkt <= opts.kkt_tol {
            let sol = make_solution(nlp, &z, cost, kkt, violation, SolveStatus::Converged);
            return Ok((sol, trace));
        }

        // infeasibility measure including complementarity of inactive constraints
        let infeas = ev
            .g
            .iter()
            .zip(&lam)
            .map(|(&gi, &li)| gi.max(-li / rho).abs())
            .fold(0.0f64, f64::max);
        if infeas > opts.violation_decrease * prev_infeas && violation > opts.cons_tol {
            rho *= opts.penalty_growth;
        }
        prev_infeas = infeas;
        lam = lam_new;
        let grad_now = ev.grad_f.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        inner_tol = (inner_tol * 0.1).max(0.1 * opts.kkt_tol * grad_now);

        if rho > 1e14 {
            break;
        }
    }

    let (zb, vb, cb, kb) = best.expect("at least one outer iteration");
    let status = if vb > opts.cons_tol && rho > 1e14 {
        SolveStatus::InfeasibleDetected
    } else {
        SolveStatus::MaxIter
    };
    Ok((make_solution(nlp, &zb, cb, kb, vb, status), trace))
}

fn make_solution<N: Nlp + ?Sized>(nlp: &N, z: &[f64], cost: f64, kkt: f64, violation: f64, status: SolveStatus) -> Solution {
    let slacks = nlp.slack_range();
    let mut x = z[..slacks.start].to_vec();
    x.extend_from_slice(&z[slacks.end..]);
    Solution {
        x,
        slacks: z[slacks].to_vec(),
        cost_value: cost,
        kkt_residual: kkt,
        constraint_violation: violation,
        status,
    }
}

/// Start `index` of a multistart run. Index 0 is `z0` itself; the others jitter
/// `x` by ±10% (±0.1 for zero entries) and move slacks multiplicatively relative
/// to their upper bound, staying inside the box.
pub fn perturbed_start<N: Nlp + ?Sized>(nlp: &N, z0: &[f64], seed: u64, index: usize) -> Vec<f64> {
    let mut z = z0.to_vec();
    if index == 0 {
        return z;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let slacks = nlp.slack_range();
    let (lower, upper) = (nlp.lower(), nlp.upper());
    for (i, zi) in z.iter_mut().enumerate() {
        let u: f64 = rng.gen_range(-1.0..1.0);
        if slacks.contains(&i) {
            let gap = upper[i] - *zi;
            if gap.is_finite() && gap > 0.0 {
                *zi = upper[i] - gap * u.exp();
            }
        } else {
            let radius = if *zi == 0.0 { 0.1 } else { 0.1 * zi.abs() };
            *zi += u * radius;
        }
        *zi = zi.max(lower[i]).min(upper[i]);
    }
    z
}

/// Runs `solve` from `z0` and `multistart_count - 1` perturbed starts (in parallel)
/// and returns the lowest-cost converged solution, or the lowest-violation one if
/// none converged. Ties are broken by start index.
pub fn multistart_solve<N: Nlp + ?Sized>(nlp: &N, z0: &[f64], opts: &SolverOptions) -> Result<(Solution, SolveTrace)> {
    opts.validate()?;
    let runs: Vec<Result<(Solution, SolveTrace)>> = (0..opts.multistart_count)
        .into_par_iter()
        .map(|k| solve(nlp, &perturbed_start(nlp, z0, opts.seed, k), opts))
        .collect();
    let mut best: Option<(Solution, SolveTrace)> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(candidate) => {
                let replace = match &best {
                    None => true,
                    Some((b, _)) => match (candidate.0.converged(), b.converged()) {
                        (true, false) => true,
                        (false, true) => false,
                        (true, true) => candidate.0.cost_value < b.cost_value,
                        (false, false) => candidate.0.constraint_violation < b.constraint_violation,
                    },
                };
                if replace {
                    best = Some(candidate);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("multistart_count >= 1"),
    }
}

/// Largest relative error between analytic derivatives (cost gradient and every
/// constraint Jacobian row) and fourth-order central differences.
///
/// Each entry contributes `|analytic - fd| / max(1, |fd|)`. The step for coordinate `j`
/// is `min(h, dist_j / 100)` where `dist_j` is the distance to the nearest bound.
pub fn check_gradients<N: Nlp + ?Sized>(nlp: &N, z: &[f64], h: f64) -> f64 {
    let grad = nlp.cost_gradient(z);
    let jac = nlp.constraint_jacobian(z);
    let (lower, upper) = (nlp.lower(), nlp.upper());
    let mut zp = z.to_vec();
    let mut worst = 0.0f64;
    let rel = |a: f64, fd: f64| (a - fd).abs() / fd.abs().max(1.0);
    for j in 0..z.len() {
        let dist = (z[j] - lower[j]).min(upper[j] - z[j]);
        let step = h.min(dist / 100.0);
        let mut at = |offset: f64| {
            zp[j] = z[j] + offset;
            let out = (nlp.cost(&zp), nlp.constraints(&zp));
            zp[j] = z[j];
            out
        };
        let (f2p, g2p) = at(2.0 * step);
        let (f1p, g1p) = at(step);
        let (f1m, g1m) = at(-step);
        let (f2m, g2m) = at(-2.0 * step);
        let stencil = |a2p: f64, a1p: f64, a1m: f64, a2m: f64| (8.0 * (a1p - a1m) - (a2p - a2m)) / (12.0 * step);
        worst = worst.max(rel(grad[j], stencil(f2p, f1p, f1m, f2m)));
        for i in 0..jac.rows() {
            worst = worst.max(rel(jac[(i, j)], stencil(g2p[i], g1p[i], g1m[i], g2m[i])));
        }
    }
    worst
}
