//! Scenario files, replicate orchestration, and run-directory output.

pub mod config;
pub mod export;
pub mod report;
pub mod run;

use std::path::Path;

use crate::error::{Error, Result};
use config::Scenario;

/// Scenarios shipped with the toolkit: `(name, TOML text)`.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("poly-vs-n", include_str!("../../scenarios/poly-vs-n.toml")),
    ("poly-vs-budget", include_str!("../../scenarios/poly-vs-budget.toml")),
    ("highdim-lasso", include_str!("../../scenarios/highdim-lasso.toml")),
    ("knn-rates", include_str!("../../scenarios/knn-rates.toml")),
    ("classification-rates", include_str!("../../scenarios/classification-rates.toml")),
    ("prob-shift", include_str!("../../scenarios/prob-shift.toml")),
];

pub fn builtin_scenario(name: &str) -> Option<Result<Scenario>> {
    BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, text)| Scenario::from_toml_str(text))
}

/// Loads a scenario from a file path, or a built-in scenario by name when no
/// such file exists.
pub fn load_scenario(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path);
    }
    builtin_scenario(spec)
        .unwrap_or_else(|| Err(Error::config(format!("'{spec}' is neither a config file nor a built-in scenario"))))
}
