//! Open-loop control of discrete-time linear Gaussian-Markov models posed as JCCPs.
//!
//! ```text
//! x_{t+1} = A x_t + B_u u_t + B_w w_t,   y_t = C x_t + D_u u_t + D_w w_t,
//! x_0 ~ N(x̄₀, Σ_x),   w_t ~ N(0, Σ_w) i.i.d.
//! ```
//!
//! The decision vector is `u = [u_0, …, u_{N-1}]` and the random vector is
//! `φ = [y_1, …, y_N]`, stacked time-major.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{zoh_discretize, Matrix, SymMatrix};
use crate::problem::{check_psd, AffineMap, JccpProblem, QuadraticCost};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussMarkovModel {
    pub a: Matrix<f64>,
    pub bu: Matrix<f64>,
    pub bw: Matrix<f64>,
    pub c: Matrix<f64>,
    pub du: Matrix<f64>,
    pub dw: Matrix<f64>,
    pub x0_mean: Vec<f64>,
    pub x0_cov: SymMatrix<f64>,
    pub w_cov: SymMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub n: usize,
    pub q: SymMatrix<f64>,
    pub r: SymMatrix<f64>,
    pub y_max: Vec<f64>,
    pub beta: f64,
}

fn expect_shape(m: &Matrix<f64>, shape: (usize, usize), what: &str) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::Dimension(format!("{what} is {:?}, expected {:?}", m.shape(), shape)));
    }
    Ok(())
}

impl GaussMarkovModel {
    pub fn n_state(&self) -> usize {
        self.a.rows()
    }

    pub fn n_input(&self) -> usize {
        self.bu.cols()
    }

    pub fn n_noise(&self) -> usize {
        self.bw.cols()
    }

    pub fn n_output(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p, q, r) = (self.a.rows(), self.n_input(), self.n_noise(), self.n_output());
        expect_shape(&self.a, (n, n), "A")?;
        expect_shape(&self.bu, (n, p), "Bu")?;
        expect_shape(&self.bw, (n, q), "Bw")?;
        expect_shape(&self.c, (r, n), "C")?;
        expect_shape(&self.du, (r, p), "Du")?;
        expect_shape(&self.dw, (r, q), "Dw")?;
        if self.x0_mean.len() != n || self.x0_cov.dim() != n || self.w_cov.dim() != q {
            return Err(Error::Dimension("initial state or noise dimensions disagree with A, Bw".into()));
        }
        let finite = [&self.a, &self.bu, &self.bw, &self.c, &self.du, &self.dw].iter().all(|m| m.is_finite())
            && self.x0_mean.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("model contains non-finite entries".into()));
        }
        check_psd(&self.x0_cov, "x0_cov")?;
        check_psd(&self.w_cov, "w_cov")
    }

    /// `[A⁰, A¹, …, A^k]`.
    fn powers(&self, k: usize) -> Vec<Matrix<f64>> {
        let mut out = vec![Matrix::identity(self.n_state())];
        for t in 1..=k {
            out.push(out[t - 1].matmul(&self.a));
        }
        out
    }

    /// One step of the dynamics; returns `(x_{t+1}, y_t)`.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut y = self.c.matvec(x);
        for (yi, (a, b)) in y.iter_mut().zip(self.du.matvec(u).into_iter().zip(self.dw.matvec(w))) {
            *yi += a + b;
        }
        let mut xn = self.a.matvec(x);
        for (xi, (a, b)) in xn.iter_mut().zip(self.bu.matvec(u).into_iter().zip(self.bw.matvec(w))) {
            *xi += a + b;
        }
        (xn, y)
    }
}

impl HorizonSpec {
    pub fn validate(&self, model: &GaussMarkovModel) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("horizon N must be at least 1".into()));
        }
        if self.q.dim() != model.n_state() || self.r.dim() != model.n_input() || self.y_max.len() != model.n_output() {
            return Err(Error::Dimension("Q, R or y_max dimensions disagree with the model".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Validation(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        check_psd(&self.q, "Q")?;
        let eig = crate::numerics::sym_eig(&self.r)?;
        if eig.lambda.iter().any(|&l| l <= 0.0) {
            return Err(Error::Validation("R must be positive definite".into()));
        }
        Ok(())
    }
}

/// Trajectory `(x_1..x_N, y_1..y_N)` for an input sequence, initial state and
/// noise sequence `w_0..w_N`. `u_N` is taken as zero in the output equation.
pub fn simulate(model: &GaussMarkovModel, u: &[f64], x0: &[f64], w: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let p = model.n_input();
    let n_steps = u.len() / p;
    let zero_u = vec![0.0; p];
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(n_steps);
    let mut outputs = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        let (xn, _) = model.step(&x, &u[t * p..(t + 1) * p], &w[t]);
        x = xn;
        states.push(x.clone());
        let t1 = t + 1;
        let ut = if t1 < n_steps { &u[t1 * p..(t1 + 1) * p] } else { &zero_u[..] };
        let (_, y) = model.step(&x, ut, &w[t1]);
        outputs.push(y);
    }
    (states, outputs)
}

/// Affine map `u ↦ E[y_1..y_N]`.
pub fn stack_output_mean(model: &GaussMarkovModel, spec: &HorizonSpec) -> AffineMap {
    let (p, r, n) = (model.n_input(), model.n_output(), spec.n);
    let pw = model.powers(n);
    let mut g = Matrix::zeros(r * n, p * n);
    let mut h = Vec::with_capacity(r * n);
    let cb: Vec<Matrix<f64>> = (0..n).map(|l| model.c.matmul(&pw[l]).matmul(&model.bu)).collect();
    for t in 1..=n {
        h.extend(model.c.matmul(&pw[t]).matvec(&model.x0_mean));
        for k in 0..t {
            g.set_block((t - 1) * r, k * p, &cb[t - 1 - k]);
        }
        if t < n {
            g.set_block((t - 1) * r, t * p, &model.du);
        }
    }
    AffineMap::new(g, h).expect("stacked dimensions agree")
}

/// Coefficients of each `y_t` on the sources `[x_0 − x̄₀, w_0, …, w_N]`.
fn output_noise_coefficients(model: &GaussMarkovModel, n: usize) -> Matrix<f64> {
    let (nx, q, r) = (model.n_state(), model.n_noise(), model.n_output());
    let pw = model.powers(n);
    let mut f = Matrix::zeros(r * n, nx + q * (n + 1));
    for t in 1..=n {
        let row = (t - 1) * r;
        f.set_block(row, 0, &model.c.matmul(&pw[t]));
        for k in 0..t {
            f.set_block(row, nx + k * q, &model.c.matmul(&pw[t - 1 - k]).matmul(&model.bw));
        }
        f.set_block(row, nx + t * q, &model.dw);
    }
    f
}

fn source_covariance(model: &GaussMarkovModel, n: usize) -> SymMatrix<f64> {
    let (nx, q) = (model.n_state(), model.n_noise());
    let mut s = Matrix::zeros(nx + q * (n + 1), nx + q * (n + 1));
    s.set_block(0, 0, model.x0_cov.as_matrix());
    for k in 0..=n {
        s.set_block(nx + k * q, nx + k * q, model.w_cov.as_matrix());
    }
    SymMatrix::new(s).expect("block diagonal of symmetric blocks")
}

/// Covariance of `[y_1, …, y_N]`.
pub fn stack_output_cov(model: &GaussMarkovModel, spec: &HorizonSpec) -> SymMatrix<f64> {
    let f = output_noise_coefficients(model, spec.n);
    source_covariance(model, spec.n).congruence(&f).expect("conforming shapes")
}

/// `(Φ, Γ)` with `E[x_1..x_N] = Φ x̄₀ + Γ u`.
fn stacked_state_maps(model: &GaussMarkovModel, n: usize) -> (Matrix<f64>, Matrix<f64>) {
    let (nx, p) = (model.n_state(), model.n_input());
    let pw = model.powers(n);
    let mut phi = Matrix::zeros(nx * n, nx);
    let mut gamma = Matrix::zeros(nx * n, p * n);
    let ab: Vec<Matrix<f64>> = (0..n).map(|l| pw[l].matmul(&model.bu)).collect();
    for t in 0..n {
        phi.set_block(t * nx, 0, &pw[t + 1]);
        for k in 0..=t {
            gamma.set_block(t * nx, k * p, &ab[t - k]);
        }
    }
    (phi, gamma)
}

fn block_diag_repeat(block: &Matrix<f64>, n: usize) -> Matrix<f64> {
    let (r, c) = block.shape();
    let mut out = Matrix::zeros(r * n, c * n);
    for t in 0..n {
        out.set_block(t * r, t * c, block);
    }
    out
}

/// `Σ_t (E[x_{t+1}]ᵀ Q E[x_{t+1}] + u_tᵀ R u_t)` as `uᵀHu + cᵀu + const`.
/// The constant is the free-response cost; the noise contribution is in [`noise_cost`].
pub fn stack_cost(model: &GaussMarkovModel, spec: &HorizonSpec) -> QuadraticCost {
    let n = spec.n;
    let (phi, gamma) = stacked_state_maps(model, n);
    let qbar = block_diag_repeat(spec.q.as_matrix(), n);
    let rbar = block_diag_repeat(spec.r.as_matrix(), n);
    let qg = qbar.matmul(&gamma);
    let h = gamma.transpose().matmul(&qg).add(&rbar);
    let free = phi.matvec(&model.x0_mean);
    let c: Vec<f64> = qg.tr_matvec(&free).into_iter().map(|v| 2.0 * v).collect();
    let constant: f64 = free.iter().zip(qbar.matvec(&free)).map(|(a, b)| a * b).sum();
    let h = SymMatrix::new(h).expect("square").into_matrix();
    QuadraticCost::new(h, c, constant).expect("stacked dimensions agree")
}

/// `Σ_t tr(Q Cov(x_{t+1}))`, the part of the expected cost that no input affects.
pub fn noise_cost(model: &GaussMarkovModel, spec: &HorizonSpec) -> f64 {
    let mut cov = model.x0_cov.as_matrix().clone();
    let bw_cov = SymMatrix::new(model.bw.matmul(model.w_cov.as_matrix()).matmul(&model.bw.transpose()))
        .expect("square")
        .into_matrix();
    let at = model.a.transpose();
    let mut total = 0.0;
    for _ in 0..spec.n {
        cov = model.a.matmul(&cov).matmul(&at).add(&bw_cov);
        let qc = spec.q.as_matrix().matmul(&cov);
        total += (0..model.n_state()).map(|i| qc[(i, i)]).sum::<f64>();
    }
    total
}

/// Realized cost `Σ_t (x_{t+1}ᵀ Q x_{t+1} + u_tᵀ R u_t)` of one trajectory.
pub fn realized_cost(spec: &HorizonSpec, states: &[Vec<f64>], u: &[f64]) -> f64 {
    let p = spec.r.dim();
    let quad = |m: &Matrix<f64>, v: &[f64]| v.iter().zip(m.matvec(v)).map(|(a, b)| a * b).sum::<f64>();
    states
        .iter()
        .enumerate()
        .map(|(t, x)| quad(spec.q.as_matrix(), x) + quad(spec.r.as_matrix(), &u[t * p..(t + 1) * p]))
        .sum()
}

/// JCCP with `M = I` over the stacked outputs and `m` the tiled `y_max`.
pub fn to_jccp(model: &GaussMarkovModel, spec: &HorizonSpec) -> Result<JccpProblem> {
    model.validate()?;
    spec.validate(model)?;
    let n_phi = model.n_output() * spec.n;
    let m: Vec<f64> = (0..spec.n).flat_map(|_| spec.y_max.iter().copied()).collect();
    JccpProblem::new(
        Arc::new(stack_cost(model, spec)),
        Arc::new(stack_output_mean(model, spec)),
        stack_output_cov(model, spec),
        Matrix::identity(n_phi),
        m,
        spec.beta,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    MassSpring,
    F16,
}

impl Example {
    pub fn name(self) -> &'static str {
        match self {
            Example::MassSpring => "mass-spring",
            Example::F16 => "f16",
        }
    }

    /// Sample time of the discrete model in seconds.
    pub fn sample_time(self) -> f64 {
        match self {
            Example::MassSpring => 0.5,
            Example::F16 => 0.1,
        }
    }

    pub fn build(self, beta: f64) -> Result<(GaussMarkovModel, HorizonSpec, JccpProblem)> {
        match self {
            Example::MassSpring => example_mass_spring(beta),
            Example::F16 => example_f16(beta),
        }
    }
}

impl std::str::FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass-spring" => Ok(Example::MassSpring),
            "f16" => Ok(Example::F16),
            other => Err(Error::Parse(format!("unknown example '{other}' (expected mass-spring or f16)"))),
        }
    }
}

/// Two masses joined by a spring and damper, force `u` on mass 1 and disturbance `w` on mass 2,
/// sampled with a zero-order hold at 0.5 s.
pub fn example_mass_spring(beta: f64) -> Result<(GaussMarkovModel, HorizonSpec, JccpProblem)> {
    let (k, c, m1, m2) = (1.0, 0.5, 1.0, 1.0);
    let ac = Matrix::from_rows(&[
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
        vec![-k / m1, k / m1, -c / m1, c / m1],
        vec![k / m2, -k / m2, c / m2, -c / m2],
    ])?;
    let bc = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0 / m1, 0.0], vec![0.0, 1.0 / m2]])?;
    let (a, b) = zoh_discretize(&ac, &bc, 0.5)?;
    let model = GaussMarkovModel {
        a,
        bu: b.block(0, 0, 4, 1),
        bw: b.block(0, 1, 4, 1),
        c: Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]])?,
        du: Matrix::zeros(2, 1),
        dw: Matrix::zeros(2, 1),
        x0_mean: vec![-0.5, -0.5, 0.0, 0.0],
        x0_cov: SymMatrix::zeros(4),
        w_cov: SymMatrix::from_diag(&[1e-4]),
    };
    let spec = HorizonSpec {
        n: 20,
        q: SymMatrix::from_diag(&[1000.0, 1000.0, 1.0, 1.0]),
        r: SymMatrix::from_diag(&[1.0]),
        y_max: vec![0.0, 0.0],
        beta,
    };
    let p = to_jccp(&model, &spec)?;
    Ok((model, spec, p))
}

/// Short-period pitch dynamics with actuator states, already sampled at 0.1 s.
pub fn example_f16(beta: f64) -> Result<(GaussMarkovModel, HorizonSpec, JccpProblem)> {
    let a = Matrix::from_rows(&[
        vec![1.0000, 0.1025, 0.2080, -0.0502, -0.0057],
        vec![0.0, 1.1175, 4.1534, -0.8000, -0.1010],
        vec![0.0, 0.0955, 1.0722, -0.0541, -0.0153],
        vec![0.0, 0.0, 0.0, 0.1353, 0.0],
        vec![0.0, 0.0, 0.0, 0.0, 0.1353],
    ])?;
    let b = Matrix::from_rows(&[
        vec![-0.0377, -0.0040],
        vec![-1.0042, -0.1131],
        vec![-0.0453, -0.0175],
        vec![0.8647, 0.0],
        vec![0.0, 0.8647],
    ])?;
    let model = GaussMarkovModel {
        a,
        bu: b.clone(),
        bw: b,
        c: Matrix::from_rows(&[vec![-1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, -1.0, 0.0, 0.0, 0.0]])?,
        du: Matrix::zeros(2, 2),
        dw: Matrix::zeros(2, 2),
        x0_mean: vec![1.0, 0.0, 0.0, 0.0, 0.0],
        x0_cov: SymMatrix::zeros(5),
        w_cov: SymMatrix::from_diag(&[2.5e-3, 2.5e-3]),
    };
    let spec = HorizonSpec {
        n: 10,
        q: SymMatrix::from_diag(&[1000.0, 1.0, 1.0, 1.0, 1.0]),
        r: SymMatrix::identity(2),
        y_max: vec![0.0, 1.0],
        beta,
    };
    let p = to_jccp(&model, &spec)?;
    Ok((model, spec, p))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::problem::DifferentiableMap;

    fn zero_noise(model: &GaussMarkovModel, n: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; model.n_noise()]; n + 1]
    }

    #[test]
    fn example_dimensions_and_printed_entries() {
        let (m1, _, p1) = example_mass_spring(0.6).unwrap();
        assert_eq!((p1.n_phi(), p1.n_m(), p1.n_x()), (40, 40, 20));
        assert_eq!(m1.n_noise(), 1);
        let (m2, _, p2) = example_f16(0.9).unwrap();
        assert_eq!((p2.n_phi(), p2.n_m(), p2.n_x()), (20, 20, 20));
        assert_eq!(m2.a[(1, 2)], 4.1534);
        assert_eq!(m2.bu[(3, 0)], 0.8647);
    }

    #[test]
    fn free_response_mean() {
        let (model, spec, _) = example_f16(0.5).unwrap();
        let map = stack_output_mean(&model, &spec);
        let (_, ys) = simulate(&model, &[0.0; 20], &model.x0_mean, &zero_noise(&model, spec.n));
        let mean = map.eval(&[0.0; 20]);
        for (t, y) in ys.iter().enumerate() {
            for i in 0..2 {
                assert!((mean[t * 2 + i] - y[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memoryless_chain_is_subdiagonal() {
        let model = GaussMarkovModel {
            a: Matrix::zeros(2, 2),
            bu: Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            bw: Matrix::zeros(2, 1),
            c: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            du: Matrix::zeros(1, 1),
            dw: Matrix::zeros(1, 1),
            x0_mean: vec![1.0, 1.0],
            x0_cov: SymMatrix::zeros(2),
            w_cov: SymMatrix::zeros(1),
        };
        let spec = HorizonSpec {
            n: 4,
            q: SymMatrix::identity(2),
            r: SymMatrix::identity(1),
            y_max: vec![0.0],
            beta: 0.5,
        };
        let map = stack_output_mean(&model, &spec);
        let g = &map.g;
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 3.0 } else { 0.0 };
                assert_eq!(g[(i, j)], expect);
            }
        }
    }

    #[test]
    fn impulse_matches_recursion() {
        let (model, spec, _) = example_mass_spring(0.6).unwrap();
        let mut u = vec![0.0; 20];
        u[0] = 1.0;
        let mean = stack_output_mean(&model, &spec).eval(&u);
        let (_, ys) = simulate(&model, &u, &model.x0_mean, &zero_noise(&model, spec.n));
        let flat: Vec<f64> = ys.concat();
        for (a, b) in mean.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_inputs_match_recursion_exactly() {
        let (model, spec, _) = example_f16(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = stack_output_mean(&model, &spec).eval(&u);
        let (_, ys) = simulate(&model, &u, &model.x0_mean, &zero_noise(&model, spec.n));
        for (a, b) in mean.iter().zip(ys.concat()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_noise_gives_zero_covariance() {
        let (mut model, spec, _) = example_mass_spring(0.6).unwrap();
        model.w_cov = SymMatrix::zeros(1);
        assert!(stack_output_cov(&model, &spec).as_matrix().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_covariance() {
        let model = GaussMarkovModel {
            a: Matrix::from_rows(&[vec![0.9, 0.2], vec![-0.1, 0.8]]).unwrap(),
            bu: Matrix::zeros(2, 1),
            bw: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 1.0]]).unwrap(),
            c: Matrix::identity(2),
            du: Matrix::zeros(2, 1),
            dw: Matrix::zeros(2, 2),
            x0_mean: vec![0.0; 2],
            x0_cov: SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap(),
            w_cov: SymMatrix::from_diag(&[0.1, 0.2]),
        };
        let spec = HorizonSpec { n: 1, q: SymMatrix::identity(2), r: SymMatrix::identity(1), y_max: vec![0.0; 2], beta: 0.5 };
        let got = stack_output_cov(&model, &spec);
        let expect = model
            .a
            .matmul(model.x0_cov.as_matrix())
            .matmul(&model.a.transpose())
            .add(&model.bw.matmul(model.w_cov.as_matrix()).matmul(&model.bw.transpose()));
        for i in 0..2 {
            for j in 0..2 {
                assert!((got.as_matrix()[(i, j)] - expect[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn covariance_is_psd() {
        for ex in [Example::MassSpring, Example::F16] {
            let (model, spec, _) = ex.build(0.5).unwrap();
            check_psd(&stack_output_cov(&model, &spec), "stacked").unwrap();
        }
    }

    #[test]
    fn covariance_matches_sampled_trajectories() {
        let (model, spec, _) = example_f16(0.5).unwrap();
        let sigma = stack_output_cov(&model, &spec);
        let dim = sigma.dim();
        let runs = 1_000_000usize;
        let sd = model.w_cov.as_matrix()[(0, 0)].sqrt();
        let u = vec![0.0; 20];
        let mean = stack_output_mean(&model, &spec).eval(&u);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut acc = vec![0.0; dim * dim];
        let mut w = zero_noise(&model, spec.n);
        for _ in 0..runs {
            for wt in w.iter_mut() {
                for v in wt.iter_mut() {
                    *v = sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                }
            }
            let (_, ys) = simulate(&model, &u, &model.x0_mean, &w);
            let d: Vec<f64> = ys.concat().iter().zip(&mean).map(|(a, b)| a - b).collect();
            for i in 0..dim {
                for j in i..dim {
                    acc[i * dim + j] += d[i] * d[j];
                }
            }
        }
        let s = sigma.as_matrix();
        for i in 0..dim {
            for j in i..dim {
                let est = acc[i * dim + j] / runs as f64;
                let se = ((s[(i, i)] * s[(j, j)] + s[(i, j)] * s[(i, j)]) / runs as f64).sqrt();
                assert!((est - s[(i, j)]).abs() <= 3.0 * se, "({i},{j}): {est} vs {}", s[(i, j)]);
            }
        }
    }

    #[test]
    fn cost_with_zero_q_is_control_energy() {
        let (model, mut spec, _) = example_f16(0.5).unwrap();
        spec.q = SymMatrix::zeros(5);
        let cost = stack_cost(&model, &spec);
        assert_eq!(cost.h, Matrix::identity(20));
        assert!(cost.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_initial_mean_has_no_linear_term() {
        let (mut model, spec, _) = example_mass_spring(0.6).unwrap();
        model.x0_mean = vec![0.0; 4];
        let cost = stack_cost(&model, &spec);
        assert!(cost.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cost_matches_recursion() {
        let (model, spec, _) = example_mass_spring(0.6).unwrap();
        let cost = stack_cost(&model, &spec);
        let zeros = vec![0.0; 20];
        let (states, _) = simulate(&model, &zeros, &model.x0_mean, &zero_noise(&model, spec.n));
        let direct = realized_cost(&spec, &states, &zeros);
        assert!((cost.value(&zeros) - direct).abs() < 1e-9 * direct);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (states, _) = simulate(&model, &u, &model.x0_mean, &zero_noise(&model, spec.n));
        let direct = realized_cost(&spec, &states, &u);
        assert!((cost.value(&u) - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn invalid_specs_rejected() {
        let (model, spec, _) = example_f16(0.5).unwrap();
        let mut bad = spec.clone();
        bad.n = 0;
        assert!(to_jccp(&model, &bad).is_err());
        let mut bad = spec.clone();
        bad.r = SymMatrix::from_diag(&[1.0, 0.0]);
        assert!(to_jccp(&model, &bad).is_err());
        let mut bad = spec;
        bad.beta = 1.0;
        assert!(to_jccp(&model, &bad).is_err());
    }
}
