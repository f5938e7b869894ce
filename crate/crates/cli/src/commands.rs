use std::fs;
use std::ops::Range;
use std::time::Instant;

use jccp::boole::build_boole_nlp;
use jccp::experiment::{run_example, solve_problem, ExampleRun, Method, SolveOutcome};
use jccp::monte_carlo::estimate_joint_probability;
use jccp::numerics::Matrix;
use jccp::solver::check_gradients;
use jccp::spectral::build_spectral_nlp;
use jccp::{load_problem, serialize_problem, Example, JccpProblem, Nlp, SolverOptions};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{sig12, Manifest, MethodStatus, OutDir, Tolerances};
use crate::{CliError, EmitArgs, ExampleArgs, Finish, GradcheckArgs, SolveArgs, SweepArgs};

/// Largest accepted relative derivative error.
const GRADIENT_TOL: f64 = 1e-6;
const GRADIENT_STEP: f64 = 1e-5;

fn options(seed: u64) -> SolverOptions {
    SolverOptions { seed, ..SolverOptions::default() }
}

fn tolerances(opts: &SolverOptions) -> Tolerances {
    Tolerances {
        kkt_tol: opts.kkt_tol,
        cons_tol: opts.cons_tol,
        max_outer: opts.max_outer,
        max_inner: opts.max_inner,
        multistart_count: opts.multistart_count,
    }
}

fn manifest(seed: u64, opts: &SolverOptions, methods: &[Method], source: String, start: Instant, status: Vec<MethodStatus>) -> Manifest {
    Manifest {
        command_line: std::env::args().collect(),
        seed,
        tolerances: tolerances(opts),
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        problem_source: source,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        status,
        outputs: Vec::new(),
    }
}

fn status_text(outcome: &SolveOutcome, opts: &SolverOptions) -> String {
    let s = serde_json::to_value(outcome.solution.status).expect("status serializes");
    let s = s.as_str().unwrap_or("unknown").to_string();
    if outcome.solution.converged() && !outcome.certified(opts.cons_tol) {
        format!("{s} (certificate violation {})", sig12(outcome.certified_violation))
    } else {
        s
    }
}

fn read_problem(path: &std::path::Path) -> Result<JccpProblem, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(load_problem(&text)?)
}

#[derive(Serialize)]
struct SolutionFile<'a> {
    method: Method,
    beta: f64,
    x: &'a [f64],
    slacks: &'a [f64],
    cost: f64,
    status: jccp::SolveStatus,
    kkt_residual: f64,
    constraint_violation: f64,
    certified_violation: f64,
    solve_seconds: f64,
}

fn solution_file(outcome: &SolveOutcome, beta: f64) -> SolutionFile<'_> {
    let s = &outcome.solution;
    SolutionFile {
        method: outcome.method,
        beta,
        x: &s.x,
        slacks: &s.slacks,
        cost: s.cost_value,
        status: s.status,
        kkt_residual: s.kkt_residual,
        constraint_violation: s.constraint_violation,
        certified_violation: outcome.certified_violation,
        solve_seconds: outcome.seconds,
    }
}

pub fn solve(args: &SolveArgs) -> Result<Finish, CliError> {
    let start = Instant::now();
    let problem = read_problem(&args.problem)?;
    let opts = options(args.seed);
    let method: Method = args.method.into();
    let outcome = solve_problem(&problem, method, &opts)?;
    let mut out = OutDir::create(&args.out)?;
    out.write_json("solution.json", &solution_file(&outcome, problem.beta()))?;

    let (p_hat, stderr) = if args.mc_runs > 0 {
        let est = estimate_joint_probability(&problem, &outcome.solution.x, args.mc_runs, args.seed)?;
        (est.p_hat, est.stderr)
    } else {
        (f64::NAN, f64::NAN)
    };
    out.write_csv(
        "report.csv",
        &["method", "beta", "cost", "beta_hat", "beta_hat_stderr", "samples"],
        &[vec![
            method.name().into(),
            sig12(problem.beta()),
            sig12(outcome.solution.cost_value),
            sig12(p_hat),
            sig12(stderr),
            args.mc_runs.to_string(),
        ]],
    )?;
    println!(
        "{method}: cost {} status {} beta_hat {}",
        sig12(outcome.solution.cost_value),
        status_text(&outcome, &opts),
        sig12(p_hat)
    );
    let status = vec![MethodStatus { method: method.name().into(), beta: problem.beta(), status: status_text(&outcome, &opts) }];
    out.finish(manifest(args.seed, &opts, &[method], args.problem.display().to_string(), start, status))?;
    Ok(if outcome.certified(opts.cons_tol) { Finish::Ok } else { Finish::NotConverged })
}

fn table_row(run: &ExampleRun) -> Vec<String> {
    let (beta_hat, stderr) = run.monte_carlo.as_ref().map_or((f64::NAN, f64::NAN), |mc| (mc.beta_hat, mc.beta_hat_stderr));
    vec![run.outcome.method.name().into(), sig12(run.outcome.solution.cost_value), sig12(beta_hat), sig12(stderr)]
}

pub fn example(args: &ExampleArgs) -> Result<Finish, CliError> {
    let start = Instant::now();
    let example: Example = args.name.into();
    let opts = options(args.seed);
    let methods = args.method.methods();
    let runs: Vec<ExampleRun> = methods
        .iter()
        .map(|&m| run_example(example, args.beta, m, &opts, args.mc_runs, args.seed))
        .collect::<Result<_, _>>()?;

    let mut out = OutDir::create(&args.out)?;
    let rows: Vec<Vec<String>> = runs.iter().map(table_row).collect();
    out.write_csv("table1.csv", &["method", "J", "beta_hat", "stderr"], &rows)?;
    let dt = example.sample_time();
    for run in &runs {
        let name = run.outcome.method.name();
        out.write_json(&format!("solution_{name}.json"), &solution_file(&run.outcome, args.beta))?;
        let Some(mc) = &run.monte_carlo else { continue };
        for env in &mc.envelopes {
            let rows: Vec<Vec<String>> = (0..env.mean.len())
                .map(|t| {
                    vec![sig12((t + 1) as f64 * dt), env.output.to_string(), sig12(env.mean[t]), sig12(env.lo[t]), sig12(env.hi[t])]
                })
                .collect();
            out.write_csv(&format!("envelope_{name}_y{}.csv", env.output), &["time", "output", "mean", "lo", "hi"], &rows)?;
        }
        let flags: Vec<Vec<String>> =
            mc.satisfied.iter().enumerate().map(|(k, &s)| vec![k.to_string(), u8::from(s).to_string()]).collect();
        out.write_csv(&format!("runs_{name}.csv"), &["run", "satisfied"], &flags)?;
        out.write_csv(
            &format!("report_{name}.csv"),
            &["runs", "beta_hat", "beta_hat_stderr", "mean_realized_cost", "cost_std"],
            &[vec![mc.runs.to_string(), sig12(mc.beta_hat), sig12(mc.beta_hat_stderr), sig12(mc.mean_realized_cost), sig12(mc.cost_std)]],
        )?;
    }
    for row in &rows {
        println!("{}", row.join(","));
    }
    let status: Vec<MethodStatus> = runs
        .iter()
        .map(|r| MethodStatus { method: r.outcome.method.name().into(), beta: args.beta, status: status_text(&r.outcome, &opts) })
        .collect();
    let all_ok = runs.iter().all(|r| r.outcome.certified(opts.cons_tol));
    out.finish(manifest(args.seed, &opts, &methods, format!("example {}", example.name()), start, status))?;
    Ok(if all_ok { Finish::Ok } else { Finish::NotConverged })
}

/// Parses `lo:hi:step` into an increasing grid inside `[0, 0.99]`. `hi` is always
/// the last point.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Usage(format!("beta grid must be lo:hi:step, got '{spec}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let (lo, hi, step) = (nums[0], nums[1], nums[2]);
    if !(0.0 <= lo && lo <= hi && hi <= 0.99) {
        return Err(CliError::Usage(format!("beta grid must satisfy 0 <= lo <= hi <= 0.99, got '{spec}'")));
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    if !(step > 0.0) {
        return Err(CliError::Usage(format!("beta grid step must be positive, got '{spec}'")));
    }
    let mut grid = Vec::new();
    for k in 0.. {
        // rounded so that 0.5 + 3·0.05 prints as 0.65
        let b = ((lo + k as f64 * step) * 1e10).round() / 1e10;
        if b > hi - 1e-12 {
            break;
        }
        grid.push(b);
    }
    grid.push(hi);
    Ok(grid)
}

struct SweepPoint {
    beta: f64,
    runs: Vec<(Method, Result<ExampleRun, String>)>,
}

pub fn sweep(args: &SweepArgs) -> Result<Finish, CliError> {
    let start = Instant::now();
    let grid = parse_grid(&args.betas)?;
    let example: Example = args.name.into();
    let opts = options(args.seed);
    let methods = args.method.methods();
    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&beta| SweepPoint {
            beta,
            runs: methods
                .iter()
                .map(|&m| (m, run_example(example, beta, m, &opts, args.mc_runs, args.seed).map_err(|e| e.to_string())))
                .collect(),
        })
        .collect();

    let mut rows = Vec::new();
    let mut status = Vec::new();
    let mut all_ok = true;
    for p in &points {
        let mut cells = std::collections::BTreeMap::new();
        for (m, run) in &p.runs {
            let (j, bh, se, st) = match run {
                Ok(r) => {
                    let (bh, se) = r.monte_carlo.as_ref().map_or((f64::NAN, f64::NAN), |mc| (mc.beta_hat, mc.beta_hat_stderr));
                    all_ok &= r.outcome.certified(opts.cons_tol);
                    (r.outcome.solution.cost_value, bh, se, status_text(&r.outcome, &opts))
                }
                Err(e) => {
                    all_ok = false;
                    (f64::NAN, f64::NAN, f64::NAN, format!("error: {e}"))
                }
            };
            status.push(MethodStatus { method: m.name().into(), beta: p.beta, status: st.clone() });
            cells.insert(m.name(), (j, bh, se, st));
        }
        let get = |m: Method| cells.get(m.name()).cloned().unwrap_or((f64::NAN, f64::NAN, f64::NAN, "skipped".into()));
        let (s, b) = (get(Method::Spectral), get(Method::Boole));
        rows.push(vec![sig12(p.beta), sig12(s.0), sig12(b.0), sig12(s.1), sig12(b.1), sig12(s.2), sig12(b.2), s.3, b.3]);
    }
    let mut out = OutDir::create(&args.out)?;
    out.write_csv(
        "sweep.csv",
        &[
            "beta",
            "J_spectral",
            "J_boole",
            "beta_hat_spectral",
            "beta_hat_boole",
            "stderr_spectral",
            "stderr_boole",
            "status_spectral",
            "status_boole",
        ],
        &rows,
    )?;
    for row in &rows {
        println!("{}", row[..5].join(","));
    }
    out.finish(manifest(args.seed, &opts, &methods, format!("example {}", example.name()), start, status))?;
    Ok(if all_ok { Finish::Ok } else { Finish::NotConverged })
}

/// Delegates to `inner` but adds 1 to the first entry of the last Jacobian row.
struct Corrupted<N>(N);

impl<N: Nlp> Nlp for Corrupted<N> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn num_constraints(&self) -> usize {
        self.0.num_constraints()
    }
    fn lower(&self) -> &[f64] {
        self.0.lower()
    }
    fn upper(&self) -> &[f64] {
        self.0.upper()
    }
    fn cost(&self, z: &[f64]) -> f64 {
        self.0.cost(z)
    }
    fn cost_gradient(&self, z: &[f64]) -> Vec<f64> {
        self.0.cost_gradient(z)
    }
    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        self.0.constraints(z)
    }
    fn constraint_jacobian(&self, z: &[f64]) -> Matrix<f64> {
        let mut jac = self.0.constraint_jacobian(z);
        let last = jac.rows() - 1;
        jac[(last, 0)] += 1.0;
        jac
    }
    fn slack_range(&self) -> Range<usize> {
        self.0.slack_range()
    }
}

fn gradient_error<N: Nlp>(nlp: N, start: Vec<f64>, corrupt: bool) -> f64 {
    if corrupt {
        check_gradients(&Corrupted(nlp), &start, GRADIENT_STEP)
    } else {
        check_gradients(&nlp, &start, GRADIENT_STEP)
    }
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<Finish, CliError> {
    let problem = match (&args.problem, args.example) {
        (Some(path), _) => read_problem(path)?,
        (None, Some(e)) => Example::from(e).build(args.beta)?.2,
        (None, None) => return Err(CliError::Usage("gradcheck needs --problem or --example".into())),
    };
    let method: Method = args.method.into();
    let err = match method {
        Method::Spectral => {
            let nlp = build_spectral_nlp(&problem)?;
            let z = nlp.canonical_start();
            gradient_error(nlp, z, args.corrupt_jacobian)
        }
        Method::Boole => {
            let nlp = build_boole_nlp(&problem)?;
            let z = nlp.canonical_start();
            gradient_error(nlp, z, args.corrupt_jacobian)
        }
    };
    let pass = err <= GRADIENT_TOL;
    println!("{method}: max relative derivative error {} ({})", sig12(err), if pass { "pass" } else { "FAIL" });
    Ok(if pass { Finish::Ok } else { Finish::GradientFailure })
}

pub fn emit(args: &EmitArgs) -> Result<Finish, CliError> {
    let start = Instant::now();
    let example: Example = args.name.into();
    let (_, _, problem) = example.build(args.beta)?;
    let text = serialize_problem(&problem)? + "\n";
    match &args.out {
        None => print!("{text}"),
        Some(dir) => {
            let mut out = OutDir::create(dir)?;
            out.write_text(&format!("problem_{}.json", example.name()), &text)?;
            let opts = SolverOptions::default();
            out.finish(manifest(opts.seed, &opts, &[], format!("example {}", example.name()), start, Vec::new()))?;
        }
    }
    Ok(Finish::Ok)
}
