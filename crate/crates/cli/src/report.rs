//! Report emission: one directory per run named by a content hash of the
//! config, CSV files for curves and fields, a JSON report for scalar
//! summaries. CSV payloads are a pure function of the config; wall-clock
//! and build information live only in the provenance block of the JSON.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Version tag of the numerical schemes, recorded in every report.
pub const SCHEME_VERSION: &str = concat!("zerocross-", env!("CARGO_PKG_VERSION"));

/// Render a float with 17 significant digits (round-trippable f64).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// A CSV file under construction.
pub struct Csv {
    writer: BufWriter<fs::File>,
    columns: usize,
}

/// A single CSV cell.
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl Csv {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        let file = fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{}", header.join(","))?;
        Ok(Self {
            writer,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, cells: Vec<Cell>) -> std::io::Result<()> {
        assert_eq!(cells.len(), self.columns, "csv row width mismatch");
        let rendered: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::F(v) => fmt_f64(v),
                Cell::U(v) => v.to_string(),
                Cell::S(v) => v,
            })
            .collect();
        writeln!(self.writer, "{}", rendered.join(","))
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

/// Provenance block: everything needed to reproduce the run, plus
/// non-deterministic bookkeeping that is excluded from payload
/// comparisons.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub prng: &'static str,
    pub scheme_version: &'static str,
    pub build_id: String,
    pub wall_clock_secs: f64,
    pub threads: usize,
}

/// The JSON report written alongside the CSV payloads.
#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub kind: &'static str,
    pub run_id: String,
    pub config: ExperimentConfig,
    pub summary: Value,
    pub artifacts: Vec<String>,
    pub provenance: Provenance,
}

/// Hash of the canonical serialized config; prefixes the run directory.
pub fn config_hash(kind: &str, config: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    let digest = hasher.finalize();
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// Create (or reuse) the run directory `<root>/run-<hash>`.
pub fn run_dir(root: &Path, kind: &str, config: &ExperimentConfig) -> std::io::Result<PathBuf> {
    let dir = root.join(format!("run-{}", config_hash(kind, config)));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn write_report(dir: &Path, report: &ExperimentReport) -> std::io::Result<()> {
    let path = dir.join("report.json");
    let file = fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, report)?;
    writer.flush()
}
