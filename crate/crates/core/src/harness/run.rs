//! Factorial scenario execution and run-directory output.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{run_replicate, Trial};
use crate::harness::config::{Scenario, SCHEMA_VERSION};
use crate::harness::export::export_figure;
use crate::harness::report::{sha256_hex, summarize, write_csv_file, Manifest, ReplicateReport, SummaryRow, TimingRow};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ReplicateReport>,
    pub summary: Vec<SummaryRow>,
    pub timing: Vec<TimingRow>,
    pub wall_seconds: f64,
}

impl RunOutput {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

struct Cell {
    label: String,
    n: usize,
    budget: f64,
    trial: std::result::Result<Trial, String>,
}

fn cells(scenario: &Scenario) -> Vec<Cell> {
    let f = &scenario.file;
    let mut out = Vec::new();
    for &n in &f.n_values {
        for &budget in &f.budgets {
            let resolved = scenario.resolve_defenses(budget);
            for (entry, defense) in f.defenses.iter().zip(resolved) {
                let trial = defense
                    .map(|defense| Trial {
                        model: scenario.model.clone(),
                        dist: scenario.dist,
                        defense,
                        attack: scenario.attack.clone(),
                        n,
                        budget,
                        n_test: f.n_test,
                        n_validation: f.n_validation,
                    })
                    .map_err(|e| {
                        warn!("defense '{}' at U={budget}: {e}", entry.label);
                        e.to_string()
                    });
                out.push(Cell { label: entry.label.clone(), n, budget, trial });
            }
        }
    }
    out
}

fn run_job(scenario: &Scenario, cell: &Cell, replicate: usize) -> (ReplicateReport, TimingRow) {
    let start = Instant::now();
    let report = match &cell.trial {
        Ok(trial) => {
            let sample = run_replicate(trial, scenario.file.seed, replicate);
            ReplicateReport::from_sample(scenario.id(), &cell.label, cell.n, cell.budget, &sample)
        }
        Err(msg) => ReplicateReport::failed(scenario.id(), &cell.label, cell.n, cell.budget, replicate, msg.clone()),
    };
    let timing = TimingRow {
        defense: cell.label.clone(),
        n: cell.n,
        budget: cell.budget,
        replicate,
        seconds: start.elapsed().as_secs_f64(),
    };
    (report, timing)
}

fn finish(results: Vec<(ReplicateReport, TimingRow)>, start: Instant) -> RunOutput {
    let (rows, timing): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = summarize(&rows);
    RunOutput { rows, summary, timing, wall_seconds: start.elapsed().as_secs_f64() }
}

/// Runs every `(n, budget, defense, replicate)` job on one thread. Rows come
/// out in that nested order.
pub fn run_scenario_sequential(scenario: &Scenario) -> RunOutput {
    let start = Instant::now();
    let cells = cells(scenario);
    let reps = scenario.file.replicates;
    let results =
        cells.iter().flat_map(|c| (0..reps).map(move |r| (c, r))).map(|(c, r)| run_job(scenario, c, r)).collect();
    finish(results, start)
}

/// Runs the scenario on a pool of `jobs` workers (all cores when `None`).
/// Output order and contents match [`run_scenario_sequential`].
#[cfg(feature = "parallel")]
pub fn run_scenario(scenario: &Scenario, jobs: Option<usize>) -> Result<RunOutput> {
    let start = Instant::now();
    let cells = cells(scenario);
    let reps = scenario.file.replicates;
    let work: Vec<(&Cell, usize)> = cells.iter().flat_map(|c| (0..reps).map(move |r| (c, r))).collect();
    let execute = || work.par_iter().map(|&(c, r)| run_job(scenario, c, r)).collect::<Vec<_>>();
    let results = match jobs {
        Some(0) => return Err(Error::config("--jobs must be >= 1")),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::config(format!("cannot start {j} workers: {e}")))?
            .install(execute),
        None => execute(),
    };
    Ok(finish(results, start))
}

#[cfg(not(feature = "parallel"))]
pub fn run_scenario(scenario: &Scenario, jobs: Option<usize>) -> Result<RunOutput> {
    if jobs == Some(0) {
        return Err(Error::config("--jobs must be >= 1"));
    }
    Ok(run_scenario_sequential(scenario))
}

/// Writes `raw.csv`, `summary.csv`, `timing.csv`, `manifest.toml`,
/// `config.toml` and the scenario's figure files into `dir`.
pub fn write_run(scenario: &Scenario, output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv_file(&output.rows, &dir.join("raw.csv"))?;
    write_csv_file(&output.summary, &dir.join("summary.csv"))?;
    write_csv_file(&output.timing, &dir.join("timing.csv"))?;
    let manifest = Manifest {
        scenario: scenario.id().to_string(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        schema_version: SCHEMA_VERSION,
        config_sha256: sha256_hex(&scenario.source),
        seed: scenario.file.seed,
        replicates: scenario.file.replicates,
        rows: output.rows.len(),
        failed_rows: output.failed_rows(),
        wall_seconds: output.wall_seconds,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text)?;
    fs::write(dir.join("config.toml"), scenario.effective_toml()?)?;
    for &figure in &scenario.file.figures {
        match export_figure(dir, figure) {
            Ok(path) => info!("wrote {}", path.display()),
            Err(e) => warn!("figure {} not written: {e}", figure.as_str()),
        }
    }
    Ok(())
}
