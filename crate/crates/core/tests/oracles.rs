//! Worked examples checked against independent oracles.

use jccp::boole::build_boole_nlp;
use jccp::gauss_markov::{example_f16, example_mass_spring};
use jccp::monte_carlo::estimate_joint_probability;
use jccp::numerics::{sym_eig, zoh_discretize, Matrix, SymMatrix};
use jccp::solver::{check_gradients, multistart_solve, solve};
use jccp::spectral::build_spectral_nlp;
use jccp::{load_problem, normalize_problem, Nlp, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `exp(A)` from a 30-term Taylor series applied to `A / 2^s`, then squared `s` times.
fn taylor_expm(a: &Matrix<f64>, s: u32) -> Matrix<f64> {
    let n = a.rows();
    let scaled = a.scale(0.5f64.powi(s as i32));
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        sum = sum.add(&term);
    }
    for _ in 0..s {
        sum = sum.matmul(&sum);
    }
    sum
}

#[test]
fn mass_spring_discretization_matches_series() {
    let (k, c) = (1.0, 0.5);
    let ac = Matrix::from_rows(&[
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
        vec![-k, k, -c, c],
        vec![k, -k, c, -c],
    ])
    .unwrap();
    let bc = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let mut aug = Matrix::zeros(6, 6);
    aug.set_block(0, 0, &ac.scale(0.5));
    aug.set_block(0, 4, &bc.scale(0.5));
    let coarse = taylor_expm(&aug, 4);
    let fine = taylor_expm(&aug, 5);
    assert!(coarse.sub(&fine).norm_max() < 1e-13, "series oracle not converged");
    let (ad, bd) = zoh_discretize(&ac, &bc, 0.5).unwrap();
    assert!(ad.sub(&fine.block(0, 0, 4, 4)).norm_max() < 1e-10);
    assert!(bd.sub(&fine.block(0, 4, 4, 2)).norm_max() < 1e-10);
    let (model, _, _) = example_mass_spring(0.6).unwrap();
    assert_eq!(model.a, ad);
}

#[test]
fn random_symmetric_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let s = SymMatrix::from_rows(&rows).unwrap();
    let eig = sym_eig(&s).unwrap();
    assert!(eig.reconstruct().sub(s.as_matrix()).norm_max() <= 1e-10);
}

/// Diagonalizing `Mφ` and bounding the transformed vector is not enough: a vector
/// can satisfy `θ'v ≤ 0` while `v ≤ 0` fails.
#[test]
fn naive_diagonalization_counterexample() {
    let r3 = 3f64.sqrt() / 2.0;
    let theta = Matrix::from_rows(&[vec![-r3, 0.5], vec![0.5, r3]]).unwrap();
    let v = [1.0, -1.0];
    let tv = theta.matvec(&v);
    assert!(tv.iter().all(|&c| c <= 0.0), "{tv:?}");
    assert!(!v.iter().all(|&c| c <= 0.0));
    // θ' is orthogonal and symmetric, so it is its own inverse and θ'⁻¹·0 = 0
    assert!(theta.matmul(&theta).sub(&Matrix::identity(2)).norm_max() < 1e-15);
}

fn toy(beta: f64, sigma: f64) -> jccp::JccpProblem {
    load_problem(&format!(
        r#"{{"n_x":1,"n_phi":1,"n_m":1,"beta":{beta},
           "cost":{{"H":[[0.0]],"c":[-1.0],"const":0.0}},
           "mean":{{"G":[[1.0]],"h":[0.0]}},
           "sigma":[[{sigma}]],"M":[[1.0]],"m":[0.0]}}"#
    ))
    .unwrap()
}

#[test]
fn single_constraint_exactness() {
    let opts = SolverOptions::default();
    for &(beta, sigma) in &[(0.6, 1.0), (0.8, 0.5), (0.95, 2.0)] {
        let p = toy(beta, sigma);
        let bound = -(2.0 * sigma).sqrt() * jccp::numerics::erf_inv(2.0 * beta - 1.0).unwrap();
        // cost −x, so the optimum is minus the bound
        let spectral = build_spectral_nlp(&p).unwrap();
        let (s, _) = solve(&spectral, &spectral.canonical_start(), &opts).unwrap();
        assert!(s.converged());
        assert!((s.cost_value + bound).abs() < 1e-6, "spectral {} vs {}", s.cost_value, -bound);
        let boole = build_boole_nlp(&p).unwrap();
        let (b, _) = solve(&boole, &boole.canonical_start(), &opts).unwrap();
        assert!((b.cost_value + bound).abs() < 1e-6, "boole {} vs {}", b.cost_value, -bound);
    }
}

#[test]
fn certification_flags_shifted_solution() {
    let (_, _, p) = example_mass_spring(0.8).unwrap();
    let nlp = build_spectral_nlp(&p).unwrap();
    let (sol, _) = multistart_solve(&nlp, &nlp.canonical_start(), &SolverOptions::default()).unwrap();
    assert!(nlp.certify_solution(&sol).max_violation <= 1e-8);
    let mut shifted = sol.clone();
    shifted.x.iter_mut().for_each(|u| *u += 1.0);
    assert!(nlp.certify_solution(&shifted).max_violation > 0.0);
}

#[test]
fn f16_multistart_converges() {
    let (_, _, p) = example_f16(0.9).unwrap();
    let nlp = build_spectral_nlp(&p).unwrap();
    let opts = SolverOptions::default();
    let (sol, _) = multistart_solve(&nlp, &nlp.canonical_start(), &opts).unwrap();
    assert!(sol.converged(), "{:?}", sol.status);
    assert!(nlp.certify_solution(&sol).max_violation <= 1e-8);

    let single = SolverOptions { multistart_count: 1, ..opts };
    let (a, _) = multistart_solve(&nlp, &nlp.canonical_start(), &single).unwrap();
    let (b, _) = solve(&nlp, &nlp.canonical_start(), &single).unwrap();
    assert_eq!(a, b);
}

fn interior_point<N: Nlp>(nlp: &N, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = (nlp.lower(), nlp.upper());
    (0..nlp.dim())
        .map(|i| if nlp.slack_range().contains(&i) { rng.gen_range(lo[i].max(0.05)..hi[i].min(0.999)) } else { rng.gen_range(-1.0..1.0) })
        .collect()
}

#[test]
fn example_jacobians_match_finite_differences() {
    for (name, p) in [("mass-spring", example_mass_spring(0.8).unwrap().2), ("f16", example_f16(0.8).unwrap().2)] {
        let spectral = build_spectral_nlp(&p).unwrap();
        let boole = build_boole_nlp(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for k in 0..100 {
            let z = interior_point(&spectral, &mut rng);
            let err = check_gradients(&spectral, &z, 1e-5);
            assert!(err <= 1e-6, "{name} spectral point {k}: {err}");
            let z = interior_point(&boole, &mut rng);
            let err = check_gradients(&boole, &z, 1e-5);
            assert!(err <= 1e-6, "{name} boole point {k}: {err}");
        }
    }
}

#[test]
fn normalization_preserves_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut dec = || rng.gen_range(-1.0..1.0);
    let n_phi = 4;
    let l: Vec<Vec<f64>> = (0..n_phi).map(|_| (0..n_phi).map(|_| dec()).collect()).collect();
    let l = Matrix::from_rows(&l).unwrap();
    let sigma = l.matmul(&l.transpose()).to_rows();
    let m: Vec<Vec<f64>> = (0..2).map(|_| (0..n_phi).map(|_| dec()).collect()).collect();
    let g: Vec<Vec<f64>> = (0..n_phi).map(|_| vec![dec(), dec()]).collect();
    let text = serde_json::json!({
        "n_x": 2, "n_phi": n_phi, "n_m": 2, "beta": 0.9,
        "cost": {"H": [[1.0, 0.0], [0.0, 1.0]], "c": [0.0, 0.0], "const": 0.0},
        "mean": {"G": g, "h": vec![0.1; n_phi]},
        "sigma": sigma, "M": m, "m": [0.5, 0.8]
    })
    .to_string();
    let p = load_problem(&text).unwrap();
    let q = normalize_problem(&p);
    assert_eq!((q.n_phi(), q.n_m()), (2, 2));
    let x = [0.3, -0.2];
    let a = estimate_joint_probability(&p, &x, 100_000, 1).unwrap();
    let b = estimate_joint_probability(&q, &x, 100_000, 2).unwrap();
    let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.p_hat - b.p_hat).abs() <= 3.0 * se, "{} vs {}", a.p_hat, b.p_hat);
}
