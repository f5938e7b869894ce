//! Nonnegative least squares by the Lawson–Hanson active-set method.

use crate::numerics::{cholesky, cholesky_solve, Matrix};

/// Least-squares solution of `A s = b` over the columns in `set`, through the
/// normal equations (ridged only if the Gram matrix is numerically singular). Entries outside `set` are zero.
fn restricted_lsq(a: &Matrix<f64>, b: &[f64], set: &[usize]) -> Vec<f64> {
    let k = set.len();
    let mut gram = Matrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for (p, &i) in set.iter().enumerate() {
        for (q, &j) in set.iter().enumerate().take(p + 1) {
            let v: f64 = (0..a.rows()).map(|r| a[(r, i)] * a[(r, j)]).sum();
            gram[(p, q)] = v;
            gram[(q, p)] = v;
        }
        rhs[p] = (0..a.rows()).map(|r| a[(r, i)] * b[r]).sum();
    }
    let diag = (0..k).fold(0.0f64, |m, p| m.max(gram[(p, p)]));
    let mut ridge = 0.0;
    let factor = loop {
        let mut shifted = gram.clone();
        for p in 0..k {
            shifted[(p, p)] += ridge;
        }
        if let Some(l) = cholesky(&shifted) {
            break l;
        }
        ridge = if ridge == 0.0 { 1e-12 * diag.max(f64::MIN_POSITIVE) } else { ridge * 100.0 };
    };
    cholesky_solve(&factor, &mut rhs);
    let mut s = vec![0.0; a.cols()];
    for (&i, v) in set.iter().zip(rhs) {
        s[i] = v;
    }
    s
}

/// `argmin ‖A x − b‖₂` subject to `x ≥ 0`.
pub(crate) fn nnls(a: &Matrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = a.cols();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())) * b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e3 * f64::EPSILON * scale.max(f64::MIN_POSITIVE) * (a.rows().max(n) as f64);
    let dual = |x: &[f64]| {
        let r: Vec<f64> = (0..a.rows()).map(|i| b[i] - (0..n).map(|j| a[(i, j)] * x[j]).sum::<f64>()).collect();
        (0..n).map(|j| (0..a.rows()).map(|i| a[(i, j)] * r[i]).sum::<f64>()).collect::<Vec<f64>>()
    };
    for _ in 0..3 * n.max(1) {
        let w = dual(&x);
        let Some(t) = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j])) else {
            break;
        };
        passive[t] = true;
        for _ in 0..3 * n.max(1) {
            let set: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let s = restricted_lsq(a, b, &set);
            if set.iter().all(|&j| s[j] > 0.0) {
                x = s;
                break;
            }
            let alpha = set
                .iter()
                .filter(|&&j| s[j] <= 0.0)
                .map(|&j| x[j] / (x[j] - s[j]))
                .fold(1.0f64, f64::min);
            for j in 0..n {
                x[j] += alpha * (s[j] - x[j]);
                if passive[j] && x[j] <= 0.0 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}
