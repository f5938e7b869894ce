use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;
use crate::scalar::Scalar;

const MAX_TAYLOR_TERMS: usize = 40;

/// Matrix exponential by scaling and squaring around a truncated Taylor series.
///
/// The scaling exponent `s` is chosen so that `‖A‖₁ / 2^s <= 0.5`.
pub fn expm<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("expm of a {}x{} matrix", a.rows(), a.cols())));
    }
    if !a.is_finite() {
        return Err(Error::Domain("expm of a non-finite matrix".into()));
    }
    let n = a.rows();
    let norm = a.norm_1();
    let mut squarings = 0u32;
    let mut scale = T::one();
    while norm * scale > T::lit(0.5) {
        scale *= T::lit(0.5);
        squarings += 1;
    }
    let scaled = a.scale(scale);

    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=MAX_TAYLOR_TERMS {
        term = term.matmul(&scaled).scale(T::one() / T::lit(k as f64));
        result = result.add(&term);
        if term.norm_max() <= T::epsilon() * result.norm_max() * T::lit(1e-2) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

/// Exact zero-order-hold discretization of `ẋ = Ac x + Bc u` with sample time `dt`.
///
/// Computes `exp([[Ac, Bc], [0, 0]]·dt) = [[Ad, Bd], [0, I]]`.
pub fn zoh_discretize<T: Scalar>(ac: &Matrix<T>, bc: &Matrix<T>, dt: T) -> Result<(Matrix<T>, Matrix<T>)> {
    let n = ac.rows();
    let p = bc.cols();
    if !ac.is_square() || bc.rows() != n {
        return Err(Error::Dimension(format!(
            "zoh needs square Ac and Bc with {n} rows, got Ac {:?} and Bc {:?}",
            ac.shape(),
            bc.shape()
        )));
    }
    if !(dt > T::zero()) {
        return Err(Error::Domain(format!("sample time must be positive, got {dt}")));
    }
    let mut aug = Matrix::zeros(n + p, n + p);
    aug.set_block(0, 0, &ac.scale(dt));
    aug.set_block(0, n, &bc.scale(dt));
    let e = expm(&aug)?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nilpotent_case() {
        let ac = Matrix::<f64>::zeros(2, 2);
        let bc = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let (ad, bd) = zoh_discretize(&ac, &bc, 0.3).unwrap();
        assert!(ad.sub(&Matrix::identity(2)).norm_max() < 1e-15);
        assert!((bd[(0, 0)] - 0.3).abs() < 1e-15 && (bd[(1, 0)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn scalar_closed_form() {
        let (a, dt) = (-1.7f64, 0.5f64);
        let (ad, bd) = zoh_discretize(
            &Matrix::from_rows(&[vec![a]]).unwrap(),
            &Matrix::from_rows(&[vec![1.0]]).unwrap(),
            dt,
        )
        .unwrap();
        let e = (a * dt).exp();
        assert!((ad[(0, 0)] - e).abs() <= 1e-14 * e);
        assert!((bd[(0, 0)] - (e - 1.0) / a).abs() <= 1e-14);
    }

    #[test]
    fn large_norm_scalar() {
        let e = expm(&Matrix::from_rows(&[vec![10.0f64]]).unwrap()).unwrap();
        assert!((e[(0, 0)] / 10.0f64.exp() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_input() {
        let ac = Matrix::<f64>::zeros(2, 2);
        let bc = Matrix::<f64>::zeros(3, 1);
        assert!(zoh_discretize(&ac, &bc, 0.1).is_err());
        assert!(zoh_discretize(&ac, &Matrix::zeros(2, 1), 0.0).is_err());
    }
}
