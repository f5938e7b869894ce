use crate::error::{Error, Result};
use crate::numerics::matrix::{Matrix, SymMatrix};
use crate::scalar::Scalar;

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;

/// Orthogonal eigendecomposition `S = θ diag(λ) θᵀ`.
///
/// Eigenvalues are sorted in descending order. Each column of `theta` is an
/// eigenvector whose largest-magnitude component (the first one, on ties) is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair<T: Scalar> {
    pub theta: Matrix<T>,
    pub lambda: Vec<T>,
}

impl<T: Scalar> EigenPair<T> {
    /// `θ diag(λ) θᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.lambda.len();
        let mut scaled = self.theta.clone();
        for i in 0..n {
            for (j, &l) in self.lambda.iter().enumerate() {
                scaled[(i, j)] *= l;
            }
        }
        scaled.matmul(&self.theta.transpose())
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig<T: Scalar>(s: &SymMatrix<T>) -> Result<EigenPair<T>> {
    let n = s.dim();
    let mut a = s.as_matrix().clone();
    let mut v = Matrix::<T>::identity(n);

    let frob2 = a.as_slice().iter().fold(T::zero(), |acc, &x| acc + x * x);
    let target = T::epsilon() * T::epsilon() * frob2 * T::lit(1e-2);
    let mut converged = n == 1;
    for _sweep in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= target || off == T::zero() {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let phi = (aqq - app) / (T::lit(2.0) * apq);
                let t = phi.signum() / (phi.abs() + (phi * phi + T::one()).sqrt());
                let t = if phi == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));

    let mut theta = Matrix::zeros(n, n);
    let mut lambda = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        lambda.push(a[(src, src)]);
        let mut pivot = 0;
        for i in 1..n {
            if v[(i, src)].abs() > v[(pivot, src)].abs() {
                pivot = i;
            }
        }
        let sign = if v[(pivot, src)] < T::zero() { -T::one() } else { T::one() };
        for i in 0..n {
            theta[(i, col)] = sign * v[(i, src)];
        }
    }
    Ok(EigenPair { theta, lambda })
}
