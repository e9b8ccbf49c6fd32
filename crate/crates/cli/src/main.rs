use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use model_privacy::harness::config::{FigureId, Scenario};
use model_privacy::harness::export::export_figure;
use model_privacy::harness::run::{run_scenario, write_run};
use model_privacy::harness::{load_scenario, BUILTIN_SCENARIOS};
use model_privacy::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "model-privacy", version, about = "Monte Carlo simulations of model-stealing defenses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and write its run directory.
    Run {
        /// Path to a scenario TOML file, or a built-in scenario name.
        config: String,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of replicates per cell.
        #[arg(long)]
        replicates: Option<usize>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (defaults to the scenario's `output_dir`, then `runs/<id>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write `figure_<id>.csv` from a run directory's summary.
    Export { run_dir: PathBuf, figure_id: String },
    /// Check a scenario without running it.
    Validate { config: String },
    /// List the built-in scenarios.
    ListScenarios,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn fail(context: &str, err: &Error) -> ExitCode {
    eprintln!("error: {context}: {err}");
    ExitCode::from(exit_code(err))
}

fn with_overrides(mut scenario: Scenario, seed: Option<u64>, replicates: Option<usize>) -> Result<Scenario, Error> {
    if let Some(s) = seed {
        scenario.file.seed = s;
    }
    if let Some(r) = replicates {
        scenario.file.replicates = r;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn run(
    config: &str,
    seed: Option<u64>,
    replicates: Option<usize>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> ExitCode {
    let scenario = match load_scenario(config).and_then(|s| with_overrides(s, seed, replicates)) {
        Ok(s) => s,
        Err(e) => return fail(config, &e),
    };
    let dir =
        out.or_else(|| scenario.file.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs").join(scenario.id()));
    info!(
        "running '{}': {} cells x {} replicates",
        scenario.id(),
        scenario.file.n_values.len() * scenario.file.budgets.len() * scenario.file.defenses.len(),
        scenario.file.replicates
    );
    let output = match run_scenario(&scenario, jobs) {
        Ok(o) => o,
        Err(e) => return fail("run", &e),
    };
    if let Err(e) = write_run(&scenario, &output, &dir) {
        return fail(&dir.display().to_string(), &e);
    }
    let failed = output.failed_rows();
    if failed > 0 {
        warn!("{failed} of {} replicates failed; see the error column of raw.csv", output.rows.len());
    }
    println!("{:<18} {:>6} {:>10} {:>14} {:>12}", "defense", "n", "budget", "privacy", "se");
    for r in &output.summary {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        println!("{:<18} {:>6} {:>10} {:>14} {:>12}", r.defense, r.n, r.budget, fmt(r.privacy_mean), fmt(r.privacy_se));
    }
    println!("wrote {} ({:.1}s)", dir.display(), output.wall_seconds);
    if failed == output.rows.len() {
        eprintln!("error: every replicate failed");
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, replicates, jobs, out } => run(&config, seed, replicates, jobs, out),
        Command::Export { run_dir, figure_id } => {
            let id = match FigureId::parse(&figure_id) {
                Ok(id) => id,
                Err(e) => return fail("export", &e),
            };
            match export_figure(&run_dir, id) {
                Ok(path) => {
                    println!("wrote {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail("export", &e),
            }
        }
        Command::Validate { config } => match load_scenario(&config) {
            Ok(s) => {
                println!(
                    "ok: '{}' ({} n values, {} budgets, {} defenses, {} replicates)",
                    s.id(),
                    s.file.n_values.len(),
                    s.file.budgets.len(),
                    s.file.defenses.len(),
                    s.file.replicates
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(&config, &e),
        },
        Command::ListScenarios => {
            for (name, text) in BUILTIN_SCENARIOS {
                let description = Scenario::from_toml_str(text).map(|s| s.file.description).unwrap_or_default();
                println!("{name:<22} {description}");
            }
            ExitCode::SUCCESS
        }
    }
}
