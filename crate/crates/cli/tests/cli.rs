use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn jccp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jccp")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn toy_file(dir: &Path, sigma: &str, m_row: &str, m: &str) -> String {
    let path = dir.join("toy.json");
    let text = format!(
        r#"{{"n_x":1,"n_phi":1,"n_m":1,"beta":0.8,
           "cost":{{"H":[[0.0]],"c":[-1.0],"const":0.0}},
           "mean":{{"G":[[1.0]],"h":[0.0]}},
           "sigma":[[{sigma}]],"M":[[{m_row}]],"m":[{m}]}}"#
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn solution_x(dir: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap();
    v["x"][0].as_f64().unwrap()
}

#[test]
fn solve_toy_matches_quantile() {
    let tmp = TempDir::new().unwrap();
    let problem = toy_file(tmp.path(), "1.0", "1.0", "0.0");
    for method in ["spectral", "boole"] {
        let out_dir = tmp.path().join(method);
        let out = jccp(&["solve", "--problem", &problem, "--method", method, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let x = solution_x(&out_dir);
        assert!((x + 0.8416).abs() < 1e-4, "{method}: {x}");
        let report = csv_rows(&out_dir.join("report.csv"));
        // P(φ ≤ 0) at the optimum is exactly 0.8 for one row
        assert!((num(&report[0][3]) - 0.8).abs() < 3.0 * num(&report[0][4]) + 1e-12);
        assert!(out_dir.join("manifest.json").exists());
    }
}

#[test]
fn malformed_and_invalid_files_exit_1() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{"n_x": 1, "n_phi": 1}"#).unwrap();
    let out = jccp(&["solve", "--problem", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_m"), "{}", String::from_utf8_lossy(&out.stderr));

    let problem = toy_file(tmp.path(), "-1.0", "1.0", "0.0");
    let out = jccp(&["solve", "--problem", &problem, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma not PSD"));

    let out = jccp(&["solve", "--problem", "/nonexistent/problem.json"]);
    assert_eq!(code(&out), 1);
    let out = jccp(&["solve", "--bogus-flag"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn infeasible_problem_exits_2_with_outputs() {
    let tmp = TempDir::new().unwrap();
    // 0·φ ≤ −1 can never hold
    let problem = toy_file(tmp.path(), "1.0", "0.0", "-1.0");
    let out_dir = tmp.path().join("out");
    let out = jccp(&["solve", "--problem", &problem, "--mc-runs", "100", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("solution.json")).unwrap()).unwrap();
    assert_ne!(v["status"], "converged");
    assert!(out_dir.join("report.csv").exists() && out_dir.join("manifest.json").exists());
}

#[test]
fn mass_spring_table_orderings_and_determinism() {
    let tmp = TempDir::new().unwrap();
    for beta in ["0.6", "0.8"] {
        let mut tables = Vec::new();
        for rep in 0..2 {
            let dir = tmp.path().join(format!("{beta}-{rep}"));
            let out = jccp(&["example", "--name", "mass-spring", "--beta", beta, "--out", dir.to_str().unwrap()]);
            assert_eq!(code(&out), 0);
            tables.push(fs::read(dir.join("table1.csv")).unwrap());
            let env = csv_rows(&dir.join("envelope_spectral_y0.csv"));
            assert_eq!(env.len(), 20);
            assert!(!fs::read(dir.join("envelope_boole_y1.csv")).unwrap().is_empty());
        }
        assert_eq!(tables[0], tables[1], "table1.csv differs between runs");
        let rows = csv_rows(&tmp.path().join(format!("{beta}-0")).join("table1.csv"));
        let (s, b) = (&rows[0], &rows[1]);
        assert_eq!((s[0].as_str(), b[0].as_str()), ("spectral", "boole"));
        assert!(num(&s[1]) < num(&b[1]), "J ordering at {beta}");
        assert!(num(&s[2]) < num(&b[2]), "beta_hat ordering at {beta}");
    }
}

#[test]
fn f16_example_is_safe() {
    let tmp = TempDir::new().unwrap();
    let out = jccp(&["example", "--name", "f16", "--beta", "0.9", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    for row in csv_rows(&tmp.path().join("table1.csv")) {
        assert!(num(&row[2]) >= 0.9 - 3.0 * num(&row[3]), "{row:?}");
    }
}

#[test]
fn degenerate_sweep_matches_example() {
    let tmp = TempDir::new().unwrap();
    let (sd, ed) = (tmp.path().join("sweep"), tmp.path().join("example"));
    assert_eq!(code(&jccp(&["sweep", "--name", "f16", "--betas", "0.7:0.7:0.05", "--mc-runs", "2000", "--out", sd.to_str().unwrap()])), 0);
    assert_eq!(code(&jccp(&["example", "--name", "f16", "--beta", "0.7", "--mc-runs", "2000", "--out", ed.to_str().unwrap()])), 0);
    let sweep = csv_rows(&sd.join("sweep.csv"));
    let table = csv_rows(&ed.join("table1.csv"));
    assert_eq!(sweep.len(), 1);
    assert_eq!(sweep[0][0], "0.700000000000");
    assert_eq!((&sweep[0][1], &sweep[0][3]), (&table[0][1], &table[0][2]));
    assert_eq!((&sweep[0][2], &sweep[0][4]), (&table[1][1], &table[1][2]));

    let out = jccp(&["sweep", "--name", "f16", "--betas", "0.5:0.995:0.05"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    for method in ["spectral", "boole"] {
        let out = jccp(&["gradcheck", "--example", "f16", "--method", method]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
        let out = jccp(&["gradcheck", "--example", "f16", "--method", method, "--corrupt-jacobian"]);
        assert_eq!(code(&out), 3);
    }
    let tmp = TempDir::new().unwrap();
    let problem = toy_file(tmp.path(), "1.0", "1.0", "0.0");
    assert_eq!(code(&jccp(&["gradcheck", "--problem", &problem])), 0);
    assert_eq!(code(&jccp(&["gradcheck"])), 1);
}

#[test]
fn emitted_problem_round_trips() {
    let tmp = TempDir::new().unwrap();
    let out = jccp(&["emit", "--name", "f16", "--beta", "0.9", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let path = tmp.path().join("problem_f16.json");
    let p = jccp::load_problem(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!((p.n_phi(), p.n_m(), p.n_x()), (20, 20, 20));
    assert!(tmp.path().join("manifest.json").exists());

    let dir = tmp.path().join("solved");
    let out = jccp(&["solve", "--problem", path.to_str().unwrap(), "--mc-runs", "0", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let stdout = jccp(&["emit", "--name", "mass-spring", "--beta", "0.6"]);
    assert_eq!(jccp::load_problem(&String::from_utf8(stdout.stdout).unwrap()).unwrap().n_phi(), 40);
}
