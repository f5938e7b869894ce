//! Joint chance-constrained program `min J(x) s.t. P(M φ(x) <= m) >= β`, `φ(x) ~ N(μ(x), Σ)`,
//! together with its JSON problem-file format.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, sym_eig, Matrix, SymMatrix};

/// Relative PSD tolerance: eigenvalues of Σ must be at least `-PSD_TOL * ‖Σ‖_max`.
pub const PSD_TOL: f64 = 1e-10;

/// A smooth vector-valued map with an analytic Jacobian.
///
/// Implementations must be deterministic and re-entrant.
pub trait DifferentiableMap: Debug + Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    /// `out_dim × in_dim` Jacobian at `x`.
    fn jacobian(&self, x: &[f64]) -> Matrix<f64>;

    fn as_affine(&self) -> Option<&AffineMap> {
        None
    }

    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        None
    }
}

/// `x ↦ G x + h`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub g: Matrix<f64>,
    pub h: Vec<f64>,
}

impl AffineMap {
    pub fn new(g: Matrix<f64>, h: Vec<f64>) -> Result<Self> {
        if g.rows() != h.len() {
            return Err(Error::Dimension(format!(
                "affine map G has {} rows but h has {} entries",
                g.rows(),
                h.len()
            )));
        }
        Ok(Self { g, h })
    }
}

impl DifferentiableMap for AffineMap {
    fn in_dim(&self) -> usize {
        self.g.cols()
    }

    fn out_dim(&self) -> usize {
        self.g.rows()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.g.matvec(x);
        for (yi, hi) in y.iter_mut().zip(&self.h) {
            *yi += hi;
        }
        y
    }

    fn jacobian(&self, _x: &[f64]) -> Matrix<f64> {
        self.g.clone()
    }

    fn as_affine(&self) -> Option<&AffineMap> {
        Some(self)
    }
}

/// Scalar cost `J(x) = xᵀ H x + cᵀ x + constant`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub h: Matrix<f64>,
    pub c: Vec<f64>,
    pub constant: f64,
}

impl QuadraticCost {
    pub fn new(h: Matrix<f64>, c: Vec<f64>, constant: f64) -> Result<Self> {
        if !h.is_square() || h.rows() != c.len() {
            return Err(Error::Dimension(format!(
                "quadratic cost H is {:?} but c has {} entries",
                h.shape(),
                c.len()
            )));
        }
        Ok(Self { h, c, constant })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        dot(x, &self.h.matvec(x)) + dot(&self.c, x) + self.constant
    }

    /// `(H + Hᵀ) x + c`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let hx = self.h.matvec(x);
        let htx = self.h.tr_matvec(x);
        hx.iter().zip(&htx).zip(&self.c).map(|((a, b), c)| a + b + c).collect()
    }
}

impl DifferentiableMap for QuadraticCost {
    fn in_dim(&self) -> usize {
        self.c.len()
    }

    fn out_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![self.value(x)]
    }

    fn jacobian(&self, x: &[f64]) -> Matrix<f64> {
        let g = self.gradient(x);
        Matrix::from_row_major(1, g.len(), g).expect("gradient length")
    }

    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        Some(self)
    }
}

/// `x ↦ P · inner(x)`; used when normalizing problems whose mean map is not affine.
#[derive(Clone, Debug)]
pub struct ProjectedMap {
    pub projection: Matrix<f64>,
    pub inner: Arc<dyn DifferentiableMap>,
}

impl DifferentiableMap for ProjectedMap {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }

    fn out_dim(&self) -> usize {
        self.projection.rows()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.projection.matvec(&self.inner.eval(x))
    }

    fn jacobian(&self, x: &[f64]) -> Matrix<f64> {
        self.projection.matmul(&self.inner.jacobian(x))
    }
}

/// A validated joint chance-constrained problem instance. Immutable after construction.
#[derive(Clone, Debug)]
pub struct JccpProblem {
    cost: Arc<dyn DifferentiableMap>,
    mean: Arc<dyn DifferentiableMap>,
    sigma: SymMatrix<f64>,
    m_mat: Matrix<f64>,
    m_vec: Vec<f64>,
    beta: f64,
}

impl JccpProblem {
    /// Validates dimensions, `0 <= beta < 1`, and positive semidefiniteness of `sigma`.
    pub fn new(
        cost: Arc<dyn DifferentiableMap>,
        mean: Arc<dyn DifferentiableMap>,
        sigma: SymMatrix<f64>,
        m_mat: Matrix<f64>,
        m_vec: Vec<f64>,
        beta: f64,
    ) -> Result<Self> {
        let n_x = mean.in_dim();
        let n_phi = mean.out_dim();
        if cost.out_dim() != 1 {
            return Err(Error::Validation(format!("cost must be scalar, has out_dim {}", cost.out_dim())));
        }
        if cost.in_dim() != n_x {
            return Err(Error::Validation(format!(
                "cost takes {} variables but mean takes {n_x}",
                cost.in_dim()
            )));
        }
        if n_x == 0 || n_phi == 0 {
            return Err(Error::Validation("n_x and n_phi must be positive".into()));
        }
        if sigma.dim() != n_phi {
            return Err(Error::Validation(format!("sigma is {0}x{0} but n_phi = {n_phi}", sigma.dim())));
        }
        if m_mat.cols() != n_phi {
            return Err(Error::Validation(format!("M has {} columns but n_phi = {n_phi}", m_mat.cols())));
        }
        if m_mat.rows() != m_vec.len() || m_vec.is_empty() {
            return Err(Error::Validation(format!(
                "M has {} rows but m has {} entries",
                m_mat.rows(),
                m_vec.len()
            )));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Validation(format!("beta must lie in [0, 1), got {beta}")));
        }
        if !sigma.as_matrix().is_finite() || !m_mat.is_finite() || m_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("sigma, M and m must be finite".into()));
        }
        check_psd(&sigma, "sigma")?;
        Ok(Self { cost, mean, sigma, m_mat, m_vec, beta })
    }

    pub fn cost(&self) -> &Arc<dyn DifferentiableMap> {
        &self.cost
    }

    pub fn mean(&self) -> &Arc<dyn DifferentiableMap> {
        &self.mean
    }

    pub fn sigma(&self) -> &SymMatrix<f64> {
        &self.sigma
    }

    /// Constraint matrix `M` (`n_m × n_φ`).
    pub fn constraint_matrix(&self) -> &Matrix<f64> {
        &self.m_mat
    }

    /// Constraint bound `m` (length `n_m`).
    pub fn constraint_bound(&self) -> &[f64] {
        &self.m_vec
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_x(&self) -> usize {
        self.mean.in_dim()
    }

    pub fn n_phi(&self) -> usize {
        self.mean.out_dim()
    }

    pub fn n_m(&self) -> usize {
        self.m_vec.len()
    }

    pub fn cost_value(&self, x: &[f64]) -> f64 {
        self.cost.eval(x)[0]
    }

    /// Same instance with a different confidence level.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Validation(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self { beta, ..self.clone() })
    }
}

/// Fails with a validation error naming `what` if the smallest eigenvalue is below `-PSD_TOL·‖S‖_max`.
pub fn check_psd(s: &SymMatrix<f64>, what: &str) -> Result<()> {
    let eig = sym_eig(s)?;
    let floor = -PSD_TOL * s.as_matrix().norm_max();
    let min = eig.lambda.last().copied().unwrap_or(0.0);
    if min < floor {
        return Err(Error::Validation(format!("{what} not PSD (smallest eigenvalue {min:e})")));
    }
    Ok(())
}

/// Rewrites an instance with `n_m < n_φ` as one over `M φ(x)` with `M' = I`, so that `n_m = n_φ`.
/// Instances with `n_m >= n_φ` are returned unchanged.
pub fn normalize_problem(p: &JccpProblem) -> JccpProblem {
    if p.n_m() >= p.n_phi() {
        return p.clone();
    }
    let m = &p.m_mat;
    let mean: Arc<dyn DifferentiableMap> = match p.mean.as_affine() {
        Some(a) => Arc::new(AffineMap { g: m.matmul(&a.g), h: m.matvec(&a.h) }),
        None => Arc::new(ProjectedMap { projection: m.clone(), inner: p.mean.clone() }),
    };
    let sigma = p.sigma.congruence(m).expect("M columns match sigma");
    JccpProblem {
        cost: p.cost.clone(),
        mean,
        sigma,
        m_mat: Matrix::identity(p.n_m()),
        m_vec: p.m_vec.clone(),
        beta: p.beta,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleDetected,
}

/// Result of solving an approximation program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub slacks: Vec<f64>,
    pub cost_value: f64,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    pub status: SolveStatus,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostSection {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(rename = "const")]
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanSection {
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

/// On-disk problem file. Matrices are row-major arrays of arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n_x: usize,
    pub n_phi: usize,
    pub n_m: usize,
    pub beta: f64,
    pub cost: CostSection,
    pub mean: MeanSection,
    pub sigma: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m_mat: Vec<Vec<f64>>,
    #[serde(rename = "m")]
    pub m_vec: Vec<f64>,
}

fn matrix_field(rows: &[Vec<f64>], name: &str, shape: (usize, usize)) -> Result<Matrix<f64>> {
    let m = Matrix::from_rows(rows).map_err(|e| Error::Validation(format!("{name}: {e}")))?;
    // an empty row list parses as 0x0
    let got = if rows.is_empty() { (0, shape.1) } else { m.shape() };
    if got != shape {
        return Err(Error::Validation(format!(
            "{name} must be {}x{}, got {}x{}",
            shape.0, shape.1, got.0, got.1
        )));
    }
    if !m.is_finite() {
        return Err(Error::Validation(format!("{name} has non-finite entries")));
    }
    Ok(m)
}

fn vector_field(v: &[f64], name: &str, len: usize) -> Result<Vec<f64>> {
    if v.len() != len {
        return Err(Error::Validation(format!("{name} must have {len} entries, got {}", v.len())));
    }
    Ok(v.to_vec())
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<JccpProblem> {
        let (n_x, n_phi, n_m) = (self.n_x, self.n_phi, self.n_m);
        if n_x == 0 || n_phi == 0 || n_m == 0 {
            return Err(Error::Validation("n_x, n_phi and n_m must be positive".into()));
        }
        let h = matrix_field(&self.cost.h, "cost.H", (n_x, n_x))?;
        let c = vector_field(&self.cost.c, "cost.c", n_x)?;
        let g = matrix_field(&self.mean.g, "mean.G", (n_phi, n_x))?;
        let hv = vector_field(&self.mean.h, "mean.h", n_phi)?;
        let sigma = SymMatrix::new(matrix_field(&self.sigma, "sigma", (n_phi, n_phi))?)?;
        let m_mat = matrix_field(&self.m_mat, "M", (n_m, n_phi))?;
        let m_vec = vector_field(&self.m_vec, "m", n_m)?;
        JccpProblem::new(
            Arc::new(QuadraticCost::new(h, c, self.cost.constant)?),
            Arc::new(AffineMap::new(g, hv)?),
            sigma,
            m_mat,
            m_vec,
            self.beta,
        )
    }

    /// Fails if the cost is not quadratic or the mean map is not affine.
    pub fn from_problem(p: &JccpProblem) -> Result<Self> {
        let cost = p
            .cost
            .as_quadratic()
            .ok_or_else(|| Error::Validation("only quadratic costs can be serialized".into()))?;
        let mean = p
            .mean
            .as_affine()
            .ok_or_else(|| Error::Validation("only affine mean maps can be serialized".into()))?;
        Ok(Self {
            n_x: p.n_x(),
            n_phi: p.n_phi(),
            n_m: p.n_m(),
            beta: p.beta,
            cost: CostSection { h: cost.h.to_rows(), c: cost.c.clone(), constant: cost.constant },
            mean: MeanSection { g: mean.g.to_rows(), h: mean.h.clone() },
            sigma: p.sigma.as_matrix().to_rows(),
            m_mat: p.m_mat.to_rows(),
            m_vec: p.m_vec.clone(),
        })
    }
}

/// Parses and validates a problem file.
pub fn load_problem(text: &str) -> Result<JccpProblem> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_problem()
}

/// Serializes a problem with quadratic cost and affine mean to the problem-file format.
pub fn serialize_problem(p: &JccpProblem) -> Result<String> {
    let file = ProblemFile::from_problem(p)?;
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

/// Largest relative deviation between `map.jacobian(x)` and central differences with step `h`.
///
/// Each entry contributes `|analytic - fd| / max(1, |fd|)`.
pub fn map_derivative_error(map: &dyn DifferentiableMap, x: &[f64], h: f64) -> f64 {
    let jac = map.jacobian(x);
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = map.eval(&xp);
        xp[j] = x[j] - h;
        let fm = map.eval(&xp);
        xp[j] = x[j];
        for i in 0..map.out_dim() {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            worst = worst.max((jac[(i, j)] - fd).abs() / fd.abs().max(1.0));
        }
    }
    worst
}
