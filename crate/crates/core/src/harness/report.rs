//! Per-replicate and summary tables and their CSV files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{mean_and_se, PrivacySample};

/// One row of `raw.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub scenario: String,
    pub defense: String,
    pub n: usize,
    pub budget: f64,
    pub replicate: usize,
    pub privacy: Option<f64>,
    pub utility_loss: Option<f64>,
    pub symmetric_difference: Option<usize>,
    pub selected_order: Option<usize>,
    /// Selected variable indices joined by `;`.
    pub selected_variables: Option<String>,
    pub k: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

impl ReplicateReport {
    pub fn from_sample(scenario: &str, defense: &str, n: usize, budget: f64, s: &PrivacySample) -> Self {
        ReplicateReport {
            scenario: scenario.to_string(),
            defense: defense.to_string(),
            n,
            budget,
            replicate: s.replicate,
            privacy: s.privacy,
            utility_loss: s.utility_loss,
            symmetric_difference: s.symmetric_difference,
            selected_order: s.selected_order,
            selected_variables: s
                .selected_variables
                .as_ref()
                .map(|v| v.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";")),
            k: s.k,
            converged: s.converged,
            error: s.error.clone(),
        }
    }

    pub fn failed(scenario: &str, defense: &str, n: usize, budget: f64, replicate: usize, error: String) -> Self {
        let sample = PrivacySample { replicate, error: Some(error), ..Default::default() };
        Self::from_sample(scenario, defense, n, budget, &sample)
    }
}

/// One row of `summary.csv`: a `(defense, n, budget)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub defense: String,
    pub n: usize,
    pub budget: f64,
    pub replicates: usize,
    pub failures: usize,
    pub privacy_mean: Option<f64>,
    pub privacy_se: Option<f64>,
    pub utility_mean: Option<f64>,
    pub utility_se: Option<f64>,
    pub symdiff_mean: Option<f64>,
    pub symdiff_se: Option<f64>,
}

/// Wall time of one replicate, kept apart from `raw.csv` so that file is
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub defense: String,
    pub n: usize,
    pub budget: f64,
    pub replicate: usize,
    pub seconds: f64,
}

/// Summaries in first-appearance order of the cells in `rows`.
pub fn summarize(rows: &[ReplicateReport]) -> Vec<SummaryRow> {
    let mut cells: Vec<(String, usize, u64)> = Vec::new();
    for r in rows {
        let key = (r.defense.clone(), r.n, r.budget.to_bits());
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    cells
        .into_iter()
        .map(|(defense, n, bits)| {
            let cell: Vec<&ReplicateReport> =
                rows.iter().filter(|r| r.defense == defense && r.n == n && r.budget.to_bits() == bits).collect();
            let privacy: Vec<f64> = cell.iter().filter_map(|r| r.privacy).collect();
            let utility: Vec<f64> = cell.iter().filter_map(|r| r.utility_loss).collect();
            let symdiff: Vec<f64> = cell.iter().filter_map(|r| r.symmetric_difference.map(|d| d as f64)).collect();
            let (privacy_mean, privacy_se) = split(mean_and_se(&privacy));
            let (utility_mean, utility_se) = split(mean_and_se(&utility));
            let (symdiff_mean, symdiff_se) = split(mean_and_se(&symdiff));
            SummaryRow {
                scenario: cell[0].scenario.clone(),
                defense,
                n,
                budget: f64::from_bits(bits),
                replicates: cell.len(),
                failures: cell.len() - privacy.len(),
                privacy_mean,
                privacy_se,
                utility_mean,
                utility_se,
                symdiff_mean,
                symdiff_se,
            }
        })
        .collect()
}

fn split(v: Option<(f64, f64)>) -> (Option<f64>, Option<f64>) {
    match v {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    }
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}

pub fn read_csv_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_csv(fs::File::open(path)?)
}

/// Run provenance written to `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub toolkit_version: String,
    pub schema_version: u32,
    /// SHA-256 of the configuration text as given.
    pub config_sha256: String,
    pub seed: u64,
    pub replicates: usize,
    pub rows: usize,
    pub failed_rows: usize,
    pub wall_seconds: f64,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(defense: &str, n: usize, rep: usize, privacy: Option<f64>) -> ReplicateReport {
        ReplicateReport {
            scenario: "s".into(),
            defense: defense.into(),
            n,
            budget: 0.25,
            replicate: rep,
            privacy,
            utility_loss: Some(0.25),
            symmetric_difference: None,
            selected_order: Some(2),
            selected_variables: None,
            k: None,
            converged: Some(true),
            error: privacy.is_none().then(|| "boom, \"quoted\"".to_string()),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows =
            vec![row("none", 20, 0, Some(1.0e-17)), row("none", 20, 1, Some(0.1 + 0.2)), row("iid", 20, 0, None)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let back: Vec<ReplicateReport> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn summary_cells() {
        let rows = vec![row("none", 20, 0, Some(1.0)), row("none", 20, 1, Some(3.0)), row("iid", 20, 0, None)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].privacy_mean, Some(2.0));
        assert_eq!(s[0].privacy_se, Some(1.0));
        assert_eq!((s[1].replicates, s[1].failures, s[1].privacy_mean), (1, 1, None));
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let back: Vec<SummaryRow> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn sha_known_value() {
        assert_eq!(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
