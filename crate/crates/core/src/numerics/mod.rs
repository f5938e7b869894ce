//! Special functions and dense symmetric linear algebra.

mod cholesky;
mod eigen;
mod expm;
mod matrix;
mod special;

pub use cholesky::{cholesky, cholesky_solve};
pub use eigen::{sym_eig, EigenPair, MAX_SWEEPS};
pub use expm::{expm, zoh_discretize};
pub use matrix::{dot, Matrix, SymMatrix};
pub use special::{erf, erf_inv, erf_inv_with_derivative, erfc, std_normal_cdf, std_normal_quantile};
