//! Projected limited-memory BFGS for smooth minimization over a box.
//!
//! Variables sitting on a bound with the gradient pointing outward are frozen
//! for the step. The quasi-Newton direction is restricted to the remaining free
//! variables and the step length comes from a strong-Wolfe search along the
//! projected path, so several bounds can become active in one step.

use std::collections::VecDeque;

use crate::error::Result;
use crate::numerics::{cholesky, cholesky_solve, Matrix};

const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 40;
const STALL_LIMIT: usize = 5;
/// Relative size of `f` differences treated as round-off.
const FLAT_TOL: f64 = 1e-12;
const APPROX_DELTA: f64 = 0.1;
/// Iterations between finite-difference Hessian refreshes.
const PRECOND_REFRESH: usize = 25;

#[derive(Clone, Debug)]
pub(crate) struct InnerOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub pg_norm: f64,
}

#[inline]
pub(crate) fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.max(l).min(u);
    }
}

/// `‖P(x - g) - x‖_∞`.
pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&l, &u))| ((xi - gi).max(l).min(u) - xi).abs())
        .fold(0.0, f64::max)
}

/// `P(x − g) − x` for one coordinate.
fn projected_step(x: f64, g: f64, lower: f64, upper: f64) -> f64 {
    (x - g).max(lower).min(upper) - x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Trial {
    alpha: f64,
    f: f64,
    /// Derivative of `f(P(x + αd))` in `α`, over the coordinates not clipped.
    slope: f64,
    /// `g₀ᵀ(P(x + αd) − x)`, the first-order predicted change.
    predicted: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, falling back to
/// bisection, kept at least 10% of the interval away from either end.
fn interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let mut t = 0.5 * (a + b);
    if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        let denom = db - da + 2.0 * d2;
        if denom != 0.0 {
            let c = b - (b - a) * (db + d2 - d1) / denom;
            if c.is_finite() {
                t = c;
            }
        }
    }
    t.clamp(lo + 0.1 * width, hi - 0.1 * width)
}

/// Strong-Wolfe search along the projected path `P(x + α d)`, `α ∈ (0, alpha_max]`,
/// where `alpha_max` is the last breakpoint. Returns `None` when no acceptable point
/// is found.
///
/// Once `f` is within round-off of `f(0)` the decrease test can no longer be
/// decided from function values, so a step is also accepted when its slope meets
/// `φ'(α) ≤ (1 − 2δ)|φ'(0)|` (the approximate Wolfe condition of Hager and Zhang),
/// and brackets are then kept by the sign of the slope.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    eval: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    alpha_init: f64,
    alpha_max: f64,
    lower: &[f64],
    upper: &[f64],
) -> Result<Option<Trial>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x.len();
    let slope0 = dot(g0, d);
    let at = |alpha: f64, eval: &mut F| -> Result<Trial> {
        let mut xt = vec![0.0; n];
        let mut gt = vec![0.0; n];
        let mut predicted = 0.0;
        for i in 0..n {
            xt[i] = (x[i] + alpha * d[i]).max(lower[i]).min(upper[i]);
            predicted += g0[i] * (xt[i] - x[i]);
        }
        let ft = eval(&xt, &mut gt)?;
        let slope = (0..n)
            .filter(|&i| xt[i] > lower[i] && xt[i] < upper[i])
            .map(|i| gt[i] * d[i])
            .sum();
        Ok(Trial { alpha, f: ft, slope, predicted, x: xt, g: gt })
    };
    let noise = FLAT_TOL * f0.abs().max(1.0);
    let flat = |t: &Trial| (t.f - f0).abs() <= noise;
    let acceptable = |t: &Trial| {
        t.f.is_finite()
            && t.predicted < 0.0
            && (t.f <= f0 + WOLFE_C1 * t.predicted || (flat(t) && t.slope <= -(1.0 - 2.0 * APPROX_DELTA) * slope0))
    };
    // `t` is worse than `other` by value, or by slope when values are indistinguishable
    let worse = |t: &Trial, other: &Trial| {
        if flat(t) && flat(other) {
            t.slope >= 0.0
        } else {
            t.f >= other.f
        }
    };

    let mut prev = Trial { alpha: 0.0, f: f0, slope: slope0, predicted: 0.0, x: x.to_vec(), g: Vec::new() };
    let mut alpha = alpha_init.min(alpha_max);
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        let t = at(alpha, eval)?;
        evals += 1;
        if !t.f.is_finite() {
            if evals >= MAX_LINE_EVALS {
                return Ok(None);
            }
            alpha = prev.alpha + 0.1 * (alpha - prev.alpha);
            continue;
        }
        if !acceptable(&t) || (evals > 1 && worse(&t, &prev)) {
            lo = prev;
            hi = t;
            break;
        }
        if t.slope.abs() <= -WOLFE_C2 * slope0 {
            return Ok(Some(t));
        }
        if t.slope >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        if alpha >= alpha_max || evals >= MAX_LINE_EVALS {
            return Ok(Some(t));
        }
        let next = (4.0 * alpha).min(alpha_max);
        prev = t;
        alpha = next;
    }

    // zoom: lo is acceptable (or the origin) and not worse than hi
    while evals < MAX_LINE_EVALS {
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(hi.alpha.abs()) {
            break;
        }
        let a = if flat(&lo) && flat(&hi) {
            interpolate_slopes(lo.alpha, lo.slope, hi.alpha, hi.slope)
        } else {
            interpolate(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f, hi.slope)
        };
        let t = at(a, eval)?;
        evals += 1;
        if !acceptable(&t) || worse(&t, &lo) {
            hi = t;
        } else {
            if t.slope.abs() <= -WOLFE_C2 * slope0 {
                return Ok(Some(t));
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    if lo.alpha > 0.0 && acceptable(&lo) {
        Ok(Some(lo))
    } else {
        Ok(None)
    }
}

/// Secant root of the slope between `a` and `b`, kept 10% away from either end.
fn interpolate_slopes(a: f64, da: f64, b: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    let t = if da != db { a - da * (b - a) / (db - da) } else { 0.5 * (a + b) };
    let t = if t.is_finite() { t } else { 0.5 * (a + b) };
    t.clamp(lo + 0.1 * width, hi - 0.1 * width)
}

/// Last breakpoint of the projected path: beyond it every moving coordinate is clipped.
fn last_breakpoint(x: &[f64], d: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut alpha_max = 0.0f64;
    for i in 0..x.len() {
        let t = if d[i] < 0.0 {
            (lower[i] - x[i]) / d[i]
        } else if d[i] > 0.0 {
            (upper[i] - x[i]) / d[i]
        } else {
            continue;
        };
        alpha_max = alpha_max.max(t);
    }
    alpha_max
}

/// Forward-difference Jacobian of the gradient written by `eval`, symmetrized, given
/// the gradient `g` at `x`. Steps go inward at bounds; columns whose step lands on
/// a non-finite value are left zero.
pub(crate) fn fd_hessian<F>(eval: &mut F, x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Result<Matrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x.len();
    let mut h = Matrix::zeros(n, n);
    let mut xt = x.to_vec();
    let mut gt = vec![0.0; n];
    for j in 0..n {
        let mut step = f64::EPSILON.sqrt() * x[j].abs().max(1.0);
        if x[j] + step > upper[j] {
            step = -step;
        }
        if x[j] + step < lower[j] {
            continue;
        }
        xt[j] = x[j] + step;
        let ft = eval(&xt, &mut gt)?;
        xt[j] = x[j];
        if !ft.is_finite() {
            continue;
        }
        for i in 0..n {
            h[(i, j)] = (gt[i] - g[i]) / step;
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Cholesky factor of `H_FF + τI` on the free coordinates, with the smallest shift
/// `τ ∈ {0, 1e-8 d, 1e-7 d, ...}` (`d` the largest diagonal magnitude) that works.
struct Preconditioner {
    hessian: Matrix<f64>,
    free: Vec<usize>,
    factor: Option<Matrix<f64>>,
}

impl Preconditioner {
    fn refactor(&mut self, mask: &[bool]) {
        let free: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if self.factor.is_some() && free == self.free {
            return;
        }
        let k = free.len();
        let mut sub = Matrix::zeros(k, k);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                sub[(a, b)] = self.hessian[(i, j)];
            }
        }
        let scale = free.iter().fold(0.0f64, |m, &i| m.max(self.hessian[(i, i)].abs())).max(f64::MIN_POSITIVE);
        let mut tau = 0.0;
        let factor = loop {
            let mut shifted = sub.clone();
            for a in 0..k {
                shifted[(a, a)] += tau;
            }
            if let Some(l) = cholesky(&shifted) {
                break Some(l);
            }
            tau = if tau == 0.0 { 1e-8 * scale } else { 10.0 * tau };
            if !tau.is_finite() || tau > 1e8 * scale {
                break None;
            }
        };
        self.free = free;
        self.factor = factor;
    }

    /// `q ← (H_FF + τI)⁻¹ q` on the free coordinates; `false` if no factor exists.
    fn apply(&self, q: &mut [f64]) -> bool {
        let Some(l) = &self.factor else {
            return false;
        };
        let mut sub: Vec<f64> = self.free.iter().map(|&i| q[i]).collect();
        cholesky_solve(l, &mut sub);
        for (&i, v) in self.free.iter().zip(sub) {
            q[i] = v;
        }
        true
    }
}

fn masked_dot(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter().zip(b).zip(mask).filter(|(_, &m)| m).map(|((x, y), _)| x * y).sum()
}

/// Curvature model for the preconditioner: a symmetric estimate of the Hessian at `x`.
pub(crate) type HessianFn<'a> = dyn FnMut(&[f64]) -> Result<Matrix<f64>> + 'a;

/// Minimizes `f` over `[lower, upper]` starting from `x0` (projected first).
///
/// `eval(x, grad)` returns the objective and writes the gradient. Stops when the
/// projected gradient falls below `tol`, after `max_iter` iterations, or when the
/// objective stops decreasing. With a `hessian` model, refreshed every few
/// iterations, the free block of that matrix replaces the scalar initial matrix
/// of the two-loop recursion.
#[allow(clippy::too_many_arguments)]
pub(crate) fn minimize<F>(
    mut eval: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    tol: f64,
    max_iter: usize,
    memory: usize,
    mut hessian: Option<&mut HessianFn<'_>>,
) -> Result<InnerOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = eval(&x, &mut g)?;
    if !f.is_finite() {
        return Ok(InnerOutcome { x, iterations: 0, pg_norm: f64::INFINITY });
    }
    let mut pg_norm = projected_gradient_norm(&x, &g, lower, upper);

    let mut use_precond = hessian.is_some();
    let mut precond: Option<Preconditioner> = None;
    let mut since_refresh = 0;

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(memory);
    let mut free = vec![true; n];
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; memory];
    let mut rho_buf = vec![0.0; memory];
    let mut stall = 0;
    let mut iterations = 0;

    while iterations < max_iter && pg_norm > tol {
        iterations += 1;

        for i in 0..n {
            free[i] = !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0));
        }
        if use_precond && (precond.is_none() || since_refresh >= PRECOND_REFRESH) {
            let model = hessian.as_mut().expect("preconditioning requires a model");
            precond = Some(Preconditioner { hessian: model(&x)?, free: Vec::new(), factor: None });
            since_refresh = 0;
        }
        since_refresh += 1;
        if let Some(p) = precond.as_mut() {
            p.refactor(&free);
        }

        for i in 0..n {
            d[i] = if free[i] { g[i] } else { 0.0 };
        }
        for (k, (s, y)) in pairs.iter().enumerate() {
            let sy = masked_dot(s, y, &free);
            rho_buf[k] = if sy > 0.0 { 1.0 / sy } else { 0.0 };
        }
        for (k, (s, y)) in pairs.iter().enumerate().rev() {
            let a = rho_buf[k] * masked_dot(s, &d, &free);
            alpha_buf[k] = a;
            d.iter_mut().zip(y).zip(&free).filter(|(_, &m)| m).for_each(|((di, yi), _)| *di -= a * yi);
        }
        let preconditioned = precond.as_ref().is_some_and(|p| p.apply(&mut d));
        if !preconditioned {
            if let Some((s, y)) = pairs.back() {
                let yy = masked_dot(y, y, &free);
                let sy = masked_dot(s, y, &free);
                if sy > 0.0 && yy > 0.0 {
                    d.iter_mut().for_each(|di| *di *= sy / yy);
                }
            }
        }
        for (k, (s, y)) in pairs.iter().enumerate() {
            let b = rho_buf[k] * masked_dot(y, &d, &free);
            d.iter_mut().zip(s).zip(&free).filter(|(_, &m)| m).for_each(|((di, si), _)| *di += (alpha_buf[k] - b) * si);
        }
        for i in 0..n {
            // a free variable on its bound may only move inward
            let blocked = (x[i] <= lower[i] && d[i] > 0.0) || (x[i] >= upper[i] && d[i] < 0.0);
            d[i] = if free[i] && !blocked { -d[i] } else { 0.0 };
        }

        let mut slope = dot(&g, &d);
        let mut steepest = false;
        if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
            pairs.clear();
            steepest = true;
            for i in 0..n {
                d[i] = projected_step(x[i], g[i], lower[i], upper[i]);
            }
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                break;
            }
        }

        let alpha_max = last_breakpoint(&x, &d, lower, upper);
        let alpha_init = if steepest || (pairs.is_empty() && !preconditioned) {
            let dnorm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / dnorm).min(1.0)
        } else {
            1.0
        };

        let trial = line_search(&mut eval, &x, f, &g, &d, alpha_init, alpha_max, lower, upper)?;
        let Some(t) = trial else {
            if pairs.is_empty() && !use_precond {
                break;
            }
            // drop curvature information; a preconditioner that fails when fresh is abandoned
            pairs.clear();
            if since_refresh == 1 {
                use_precond = false;
            }
            precond = None;
            stall += 1;
            if stall > STALL_LIMIT {
                break;
            }
            continue;
        };

        let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > f64::EPSILON * dot(&y, &y) {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }

        let rel_decrease = (f - t.f) / f.abs().max(t.f.abs()).max(1.0);
        let pg_new = projected_gradient_norm(&t.x, &t.g, lower, upper);
        if rel_decrease <= 1e-15 && pg_new >= 0.9 * pg_norm {
            stall += 1;
        } else {
            stall = 0;
        }
        x = t.x;
        g = t.g;
        f = t.f;
        pg_norm = pg_new;
        if stall > STALL_LIMIT {
            break;
        }
    }

    Ok(InnerOutcome { x, iterations, pg_norm })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let rosen = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        };
        let inf = f64::INFINITY;
        let out = minimize(rosen, &[-1.2, 1.0], &[-inf; 2], &[inf; 2], 1e-10, 1000, 10, None).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-7 && (out.x[1] - 1.0).abs() < 1e-7, "{:?}", out.x);
    }

    #[test]
    fn box_active_bound() {
        // min (x-3)^2 + (y+1)^2 on [0,1]^2 -> (1, 0)
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 2.0 * (x[1] + 1.0);
            Ok((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2))
        };
        let out = minimize(f, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], 1e-12, 100, 5, None).unwrap();
        assert_eq!(out.x, vec![1.0, 0.0]);
        assert_eq!(out.pg_norm, 0.0);
    }

    #[test]
    fn ill_conditioned_quadratic() {
        // eigenvalues log-spaced over 4 decades in a random rotation
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for i in 0..n {
            for j in 0..i {
                let d = dot(&q[i], &q[j]);
                let qj = q[j].clone();
                q[i].iter_mut().zip(&qj).for_each(|(a, b)| *a -= d * b);
            }
            let norm = dot(&q[i], &q[i]).sqrt();
            q[i].iter_mut().for_each(|a| *a /= norm);
        }
        let lam: Vec<f64> = (0..n).map(|i| 10f64.powf(4.0 * i as f64 / (n - 1) as f64)).collect();
        let h: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| q[k][i] * lam[k] * q[k][j]).sum()).collect()).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |x: &[f64], g: &mut [f64]| {
            for i in 0..n {
                g[i] = c[i] + dot(&h[i], x);
            }
            Ok(0.5 * (dot(x, g) + dot(&c, x)))
        };
        let inf = f64::INFINITY;
        let out = minimize(f, &vec![0.0; n], &vec![-inf; n], &vec![inf; n], 1e-6, 2000, 10, None).unwrap();
        assert!(out.pg_norm <= 1e-6, "{} iterations, pg {}", out.iterations, out.pg_norm);

        // exact curvature: a handful of steps, including with half the box active
        let model = Matrix::from_rows(&h).unwrap();
        let mut hessian = |_: &[f64]| Ok(model.clone());
        let pre = minimize(f, &vec![0.0; n], &vec![-inf; n], &vec![inf; n], 1e-9, 50, 10, Some(&mut hessian)).unwrap();
        assert!(pre.pg_norm <= 1e-9 && pre.iterations <= 5, "{} iterations, pg {}", pre.iterations, pre.pg_norm);
        let lower: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.0 } else { -inf }).collect();
        let boxed = minimize(f, &vec![1.0; n], &lower, &vec![inf; n], 1e-9, 200, 10, Some(&mut hessian)).unwrap();
        assert!(boxed.pg_norm <= 1e-9, "{} iterations, pg {}", boxed.iterations, boxed.pg_norm);
    }
}
