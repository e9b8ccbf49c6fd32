//! Figure data: `(x, defense, mean, se)` tables cut from a summary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::FigureId;
use crate::harness::report::{read_csv_file, write_csv_file, SummaryRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub x: f64,
    pub defense: String,
    pub mean: f64,
    pub se: f64,
}

enum Axis {
    N,
    Budget,
}

enum Metric {
    Privacy,
    Symdiff,
    Utility,
}

fn layout(id: FigureId) -> (Axis, Metric) {
    match id {
        FigureId::PrivacyVsN => (Axis::N, Metric::Privacy),
        FigureId::PrivacyVsBudget => (Axis::Budget, Metric::Privacy),
        FigureId::SymdiffVsN => (Axis::N, Metric::Symdiff),
        FigureId::SymdiffVsBudget => (Axis::Budget, Metric::Symdiff),
        FigureId::UtilityVsBudget => (Axis::Budget, Metric::Utility),
    }
}

/// Figure rows ordered by defense (first appearance) then `x`. The summary
/// must hold every `(defense, x)` cell; the other grid axis must be a single
/// value.
pub fn figure_rows(summary: &[SummaryRow], id: FigureId) -> Result<Vec<FigureRow>> {
    if summary.is_empty() {
        return Err(Error::MissingCells("summary is empty".into()));
    }
    let (axis, metric) = layout(id);
    let x_of = |r: &SummaryRow| match axis {
        Axis::N => r.n as f64,
        Axis::Budget => r.budget,
    };
    let other_of = |r: &SummaryRow| match axis {
        Axis::N => r.budget.to_bits(),
        Axis::Budget => r.n as u64,
    };
    let mut others: Vec<u64> = summary.iter().map(other_of).collect();
    others.sort_unstable();
    others.dedup();
    if others.len() > 1 {
        let what = match axis {
            Axis::N => "budget",
            Axis::Budget => "n",
        };
        return Err(Error::config(format!(
            "figure {} needs a single {what} value, summary has {}",
            id.as_str(),
            others.len()
        )));
    }
    let mut defenses: Vec<&str> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for r in summary {
        if !defenses.contains(&r.defense.as_str()) {
            defenses.push(&r.defense);
        }
        if !xs.iter().any(|x| x.to_bits() == x_of(r).to_bits()) {
            xs.push(x_of(r));
        }
    }
    xs.sort_by(f64::total_cmp);

    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for &defense in &defenses {
        for &x in &xs {
            let cell = summary.iter().find(|r| r.defense == defense && x_of(r).to_bits() == x.to_bits());
            let stats = cell.and_then(|r| match metric {
                Metric::Privacy => r.privacy_mean.zip(r.privacy_se),
                Metric::Symdiff => r.symdiff_mean.zip(r.symdiff_se),
                Metric::Utility => r.utility_mean.zip(r.utility_se),
            });
            match stats {
                Some((mean, se)) => rows.push(FigureRow { x, defense: defense.to_string(), mean, se }),
                None => missing.push(format!("({defense}, {x})")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(format!("figure {} lacks cells {}", id.as_str(), missing.join(", "))));
    }
    Ok(rows)
}

/// Writes `figure_<id>.csv` into `run_dir` from its `summary.csv`.
pub fn export_figure(run_dir: &Path, id: FigureId) -> Result<PathBuf> {
    let summary_path = run_dir.join("summary.csv");
    if !summary_path.is_file() {
        return Err(Error::config(format!("{} has no summary.csv", run_dir.display())));
    }
    let summary: Vec<SummaryRow> = read_csv_file(&summary_path)?;
    let rows = figure_rows(&summary, id)?;
    let path = run_dir.join(format!("figure_{}.csv", id.as_str()));
    write_csv_file(&rows, &path)?;
    Ok(path)
}
