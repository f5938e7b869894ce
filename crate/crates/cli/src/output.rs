//! Output files: CSV tables with 12 significant digits, JSON documents and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// `v` with exactly 12 significant digits: plain decimal for magnitudes in
/// `[1e-5, 1e12)`, scientific notation otherwise.
pub fn sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.11e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if !(-5..=11).contains(&exp) {
        return sci;
    }
    let decimals = (11 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Collects the files written by one command so the manifest can list them.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for row in rows {
            w.write_record(row).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.into());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.into());
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<(), CliError> {
        manifest.outputs = std::mem::take(&mut self.written);
        self.write_json("manifest.json", &manifest)
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command_line: Vec<String>,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub methods: Vec<String>,
    pub problem_source: String,
    pub wall_clock_seconds: f64,
    pub status: Vec<MethodStatus>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Tolerances {
    pub kkt_tol: f64,
    pub cons_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub multistart_count: usize,
}

#[derive(Debug, Serialize)]
pub struct MethodStatus {
    pub method: String,
    pub beta: f64,
    pub status: String,
}
