//! Report formatting: 10-significant-digit numbers shared by stdout tables,
//! JSON and CSV, plus the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::experiment::IntervalSummary;
use crate::pricing::ConvergenceRow;

pub const SIG_DIGITS: usize = 10;

/// Rounds to 10 significant digits. Non-finite values pass through.
pub fn sig10(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Text form used everywhere a report number is printed.
pub fn fmt10(x: f64) -> String {
    sig10(x).to_string()
}

fn round_value(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(sig10).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_value),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 10 significant digits.
pub fn to_report_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_convergence_csv(rows: &[ConvergenceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strike",
        "k_n",
        "n_paths",
        "finite_n_price",
        "finite_n_se",
        "limit_price",
        "oracle_price",
        "rel_err",
    ])?;
    for r in rows {
        w.write_record([
            fmt10(r.strike),
            r.k_n.to_string(),
            r.n_paths.to_string(),
            fmt10(r.finite_n_price),
            fmt10(r.finite_n_se),
            fmt10(r.limit_price),
            fmt10(r.oracle_price),
            fmt10(r.rel_err),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_lindeberg_csv(report: &DiagnosticsReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eps", "y_fine", "y_coarse", "u_fine", "u_coarse", "calm"])?;
    for r in &report.lindeberg {
        w.write_record([
            fmt10(r.eps),
            fmt10(r.y_fine),
            fmt10(r.y_coarse),
            fmt10(r.u_fine),
            fmt10(r.u_coarse),
            r.calm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(rows: &[IntervalSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "interval",
        "t_start",
        "t_end",
        "h2",
        "mean_y",
        "mean_y2",
        "trader_weight_ess",
        "buyer_weight_ess",
    ])?;
    for r in rows {
        w.write_record([
            r.interval.to_string(),
            fmt10(r.t_start),
            fmt10(r.t_end),
            fmt10(r.h2),
            fmt10(r.mean_y),
            fmt10(r.mean_y2),
            fmt10(r.trader_weight_ess),
            fmt10(r.buyer_weight_ess),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_str(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn digest_all(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_text(&path, &serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
