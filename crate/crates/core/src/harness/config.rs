//! Scenario configuration files (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attackers::{
    AttackSpec, ErmOptions, InformationCriterion, KChoice, MaxOrderRule, PenalizedSpec, VarianceRule,
};
use crate::defenses::{calibrate_boundary_shift, DefenseSpec, Sign, TargetOrderRule};
use crate::error::{Error, Result};
use crate::model::TargetModel;
use crate::seeds::{replicate_seed, Role};
use crate::targets::{highdim_example1_target, make_prob_classifier, QueryDistribution};

pub const SCHEMA_VERSION: u32 = 1;
/// Flip-fraction tolerance when calibrating a boundary shift.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Polynomial {
        coefficients: Vec<f64>,
    },
    Linear {
        beta: Vec<f64>,
    },
    LinearClassifier {
        beta: Vec<f64>,
    },
    ProbClassifier {
        d: usize,
        classes: usize,
        seed: u64,
    },
    /// Sparse linear target on the grouped 40-dimensional design.
    HighdimGrouped,
}

impl TargetConfig {
    pub fn build(&self) -> Result<TargetModel> {
        match self {
            TargetConfig::Polynomial { coefficients } => TargetModel::polynomial(coefficients.clone()),
            TargetConfig::Linear { beta } => TargetModel::linear(beta.clone()),
            TargetConfig::LinearClassifier { beta } => TargetModel::linear_classifier(beta.clone()),
            TargetConfig::ProbClassifier { d, classes, seed } => make_prob_classifier(*d, *classes, *seed),
            TargetConfig::HighdimGrouped => Ok(highdim_example1_target()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueryConfig {
    Beta { alpha: f64, beta: f64 },
    Uniform { d: usize },
    Normal { d: usize },
    HighdimGrouped,
}

impl QueryConfig {
    pub fn build(&self) -> QueryDistribution {
        match *self {
            QueryConfig::Beta { alpha, beta } => QueryDistribution::Beta { alpha, beta },
            QueryConfig::Uniform { d } => QueryDistribution::UniformCube { d },
            QueryConfig::Normal { d } => QueryDistribution::StandardNormal { d },
            QueryConfig::HighdimGrouped => QueryDistribution::HighDimGrouped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionName {
    Aic,
    Bic,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceName {
    #[default]
    LargestModel,
    PerModel,
}

fn default_criterion() -> CriterionName {
    CriterionName::Aic
}
fn default_n_lambda() -> usize {
    50
}
fn default_lambda_ratio() -> f64 {
    1e-3
}
fn default_folds() -> usize {
    5
}
fn default_l2_ratios() -> Vec<f64> {
    vec![0.0, 0.5]
}
fn default_true() -> bool {
    true
}
fn default_max_iter() -> usize {
    ErmOptions::default().max_iter
}
fn default_refinement() -> usize {
    ErmOptions::default().refinement_candidates
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackConfig {
    /// Fixed `k`, or the best `k` over `k_grid` (or the default grid) on
    /// clean validation data when `k` is absent.
    Knn { k: Option<usize>, k_grid: Option<Vec<usize>> },
    PolyGic {
        #[serde(default = "default_criterion")]
        criterion: CriterionName,
        weight: Option<f64>,
        max_order: Option<usize>,
        #[serde(default)]
        variance: VarianceName,
    },
    Lasso {
        #[serde(default = "default_n_lambda")]
        n_lambda: usize,
        #[serde(default = "default_lambda_ratio")]
        lambda_ratio: f64,
        #[serde(default = "default_folds")]
        folds: usize,
    },
    ElasticNet {
        #[serde(default = "default_n_lambda")]
        n_lambda: usize,
        #[serde(default = "default_lambda_ratio")]
        lambda_ratio: f64,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default = "default_l2_ratios")]
        l2_ratios: Vec<f64>,
    },
    LinearErm {
        #[serde(default = "default_true")]
        fit_intercept: bool,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_refinement")]
        refinement_candidates: usize,
    },
}

impl AttackConfig {
    pub fn build(&self) -> Result<AttackSpec> {
        let spec = match self {
            AttackConfig::Knn { k: Some(k), k_grid: None } => AttackSpec::Knn { k: KChoice::Fixed(*k) },
            AttackConfig::Knn { k: Some(_), k_grid: Some(_) } => {
                return Err(Error::config("knn: give either `k` or `k_grid`, not both"))
            }
            AttackConfig::Knn { k: None, k_grid } => AttackSpec::Knn { k: KChoice::BestOverGrid(k_grid.clone()) },
            AttackConfig::PolyGic { criterion, weight, max_order, variance } => {
                let criterion = match (criterion, weight) {
                    (CriterionName::Aic, None) => InformationCriterion::Aic,
                    (CriterionName::Bic, None) => InformationCriterion::Bic,
                    (CriterionName::Custom, Some(w)) => InformationCriterion::Custom(*w),
                    (CriterionName::Custom, None) => {
                        return Err(Error::config("poly_gic: criterion \"custom\" needs `weight`"))
                    }
                    (_, Some(_)) => return Err(Error::config("poly_gic: `weight` is only valid with \"custom\"")),
                };
                AttackSpec::PolyGic {
                    max_order: max_order.map_or(MaxOrderRule::CubeRoot, MaxOrderRule::Fixed),
                    criterion,
                    variance: match variance {
                        VarianceName::LargestModel => VarianceRule::LargestModel,
                        VarianceName::PerModel => VarianceRule::PerModel,
                    },
                }
            }
            AttackConfig::Lasso { n_lambda, lambda_ratio, folds } => AttackSpec::Lasso(PenalizedSpec {
                n_lambda: *n_lambda,
                lambda_ratio: *lambda_ratio,
                folds: *folds,
                l2_ratios: vec![0.0],
            }),
            AttackConfig::ElasticNet { n_lambda, lambda_ratio, folds, l2_ratios } => {
                AttackSpec::ElasticNet(PenalizedSpec {
                    n_lambda: *n_lambda,
                    lambda_ratio: *lambda_ratio,
                    folds: *folds,
                    l2_ratios: l2_ratios.clone(),
                })
            }
            AttackConfig::LinearErm { fit_intercept, max_iter, refinement_candidates } => {
                AttackSpec::LinearClassErm(ErmOptions {
                    fit_intercept: *fit_intercept,
                    max_iter: *max_iter,
                    refinement_candidates: *refinement_candidates,
                })
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignName {
    #[default]
    Plus,
    Minus,
}

fn default_gamma() -> f64 {
    0.2
}
fn default_rho() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseConfig {
    None,
    Iid,
    Constant {
        #[serde(default)]
        sign: SignName,
    },
    LongRange {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        ordering_coordinate: usize,
    },
    /// At most one of `target_order`, `power_delta`, `log_multiplier`; the
    /// default is `log_multiplier = 4`.
    OrderDisguise {
        target_order: Option<usize>,
        power_delta: Option<f64>,
        log_multiplier: Option<f64>,
        max_order: Option<usize>,
    },
    Mvp {
        #[serde(default = "default_rho")]
        rho: f64,
    },
    RandomShuffle {
        xi: f64,
    },
    LabelFlip,
    /// Without `shift`, the shift is calibrated so the flip fraction equals
    /// each budget value.
    BoundaryShift {
        shift: Option<f64>,
    },
    MisleadingShift {
        delta: f64,
    },
}

impl DefenseConfig {
    /// The defense as applied at budget `budget`. Calibration draws use
    /// `seed`.
    pub fn resolve(
        &self,
        model: &TargetModel,
        dist: &QueryDistribution,
        budget: f64,
        seed: u64,
    ) -> Result<DefenseSpec> {
        let spec = match self {
            DefenseConfig::BoundaryShift { shift: None } => DefenseSpec::BoundaryShift {
                shift: calibrate_boundary_shift(model, dist, budget, CALIBRATION_TOLERANCE, seed)?,
            },
            other => other.resolve_fixed()?,
        };
        spec.validate()?;
        spec.check_compatible(model)?;
        Ok(spec)
    }

    /// The defense without budget-dependent calibration; a calibrated
    /// boundary shift resolves to shift 0.
    pub fn resolve_fixed(&self) -> Result<DefenseSpec> {
        let spec = match *self {
            DefenseConfig::None => DefenseSpec::NoDefense,
            DefenseConfig::Iid => DefenseSpec::IidNoising,
            DefenseConfig::Constant { sign } => DefenseSpec::ConstantNoising {
                sign: match sign {
                    SignName::Plus => Sign::Plus,
                    SignName::Minus => Sign::Minus,
                },
            },
            DefenseConfig::LongRange { gamma, ordering_coordinate } => {
                DefenseSpec::LongRangeNoising { gamma, ordering_coordinate }
            }
            DefenseConfig::OrderDisguise { target_order, power_delta, log_multiplier, max_order } => {
                let order_rule = match (target_order, power_delta, log_multiplier) {
                    (None, None, None) => TargetOrderRule::default(),
                    (Some(k), None, None) => TargetOrderRule::Fixed(k),
                    (None, Some(delta), None) => TargetOrderRule::Power { delta },
                    (None, None, Some(multiplier)) => TargetOrderRule::LogN { multiplier },
                    _ => {
                        return Err(Error::config(
                            "order_disguise: give at most one of target_order, power_delta, log_multiplier",
                        ))
                    }
                };
                DefenseSpec::OrderDisguise {
                    order_rule,
                    max_order: max_order.map_or(MaxOrderRule::CubeRoot, MaxOrderRule::Fixed),
                }
            }
            DefenseConfig::Mvp { rho } => DefenseSpec::Mvp { rho },
            DefenseConfig::RandomShuffle { xi } => DefenseSpec::RandomShuffle { xi },
            DefenseConfig::LabelFlip => DefenseSpec::LabelFlip,
            DefenseConfig::BoundaryShift { shift } => DefenseSpec::BoundaryShift { shift: shift.unwrap_or(0.0) },
            DefenseConfig::MisleadingShift { delta } => DefenseSpec::MisleadingShift { delta },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn default_label(&self) -> &'static str {
        self.resolve_fixed().map(|s| s.name()).unwrap_or("invalid")
    }
}

/// A defense table: an optional `label` plus the defense's own keys.
#[derive(Debug, Clone, PartialEq)]
pub struct DefenseEntry {
    pub label: String,
    pub defense: DefenseConfig,
}

impl<'de> Deserialize<'de> for DefenseEntry {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(deserializer)?;
        let label = match table.remove("label") {
            Some(toml::Value::String(s)) => Some(s),
            Some(_) => return Err(D::Error::custom("defense `label` must be a string")),
            None => None,
        };
        let defense = DefenseConfig::deserialize(toml::Value::Table(table)).map_err(D::Error::custom)?;
        let label = label.unwrap_or_else(|| defense.default_label().to_string());
        Ok(DefenseEntry { label, defense })
    }
}

impl Serialize for DefenseEntry {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let mut table = toml::Table::try_from(&self.defense).map_err(S::Error::custom)?;
        table.insert("label".into(), toml::Value::String(self.label.clone()));
        table.serialize(serializer)
    }
}

fn default_n_test() -> usize {
    1000
}
fn default_n_validation() -> usize {
    1000
}

/// Figure data a run exports automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureId {
    PrivacyVsN,
    PrivacyVsBudget,
    SymdiffVsN,
    SymdiffVsBudget,
    UtilityVsBudget,
}

impl FigureId {
    pub const ALL: [FigureId; 5] = [
        FigureId::PrivacyVsN,
        FigureId::PrivacyVsBudget,
        FigureId::SymdiffVsN,
        FigureId::SymdiffVsBudget,
        FigureId::UtilityVsBudget,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FigureId::PrivacyVsN => "privacy_vs_n",
            FigureId::PrivacyVsBudget => "privacy_vs_budget",
            FigureId::SymdiffVsN => "symdiff_vs_n",
            FigureId::SymdiffVsBudget => "symdiff_vs_budget",
            FigureId::UtilityVsBudget => "utility_vs_budget",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|f| f.as_str()).collect();
            Error::config(format!("unknown figure id '{s}' (known: {})", known.join(", ")))
        })
    }
}

/// The file format, as written by users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub replicates: usize,
    pub n_values: Vec<usize>,
    pub budgets: Vec<f64>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_validation")]
    pub n_validation: usize,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub figures: Vec<FigureId>,
    pub target: TargetConfig,
    pub queries: QueryConfig,
    pub attack: AttackConfig,
    pub defenses: Vec<DefenseEntry>,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub model: TargetModel,
    pub dist: QueryDistribution,
    pub attack: AttackSpec,
    /// Original configuration text, for hashing and archiving.
    pub source: String,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        match raw.get("schema_version") {
            Some(toml::Value::Integer(v)) if *v == i64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::config(format!(
                    "unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}"
                )))
            }
            None => return Err(Error::config("missing `schema_version`")),
        }
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file, text.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_file(file: ScenarioFile, source: String) -> Result<Self> {
        let model = file.target.build()?;
        let dist = file.queries.build();
        let attack = file.attack.build()?;
        let scenario = Scenario { file, model, dist, attack, source };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn id(&self) -> &str {
        &self.file.id
    }

    /// Checks every referenced spec before anything runs.
    pub fn validate(&self) -> Result<()> {
        let f = &self.file;
        if f.id.is_empty() || f.id.contains(['/', '\\']) {
            return Err(Error::config("scenario id must be a nonempty name without path separators"));
        }
        if f.replicates == 0 {
            return Err(Error::config("replicates must be >= 1"));
        }
        if f.n_values.is_empty() || f.n_values.contains(&0) {
            return Err(Error::config("n_values must be nonempty and positive"));
        }
        if f.budgets.is_empty() {
            return Err(Error::config("budgets must be nonempty"));
        }
        if f.n_test == 0 {
            return Err(Error::config("n_test must be >= 1"));
        }
        if f.defenses.is_empty() {
            return Err(Error::config("at least one defense is required"));
        }
        let mut seen_n = BTreeSet::new();
        if !f.n_values.iter().all(|n| seen_n.insert(n)) {
            return Err(Error::config("n_values contains duplicates"));
        }
        for (i, b) in f.budgets.iter().enumerate() {
            if f.budgets[..i].iter().any(|c| c.to_bits() == b.to_bits()) {
                return Err(Error::config("budgets contains duplicates"));
            }
        }
        self.dist.validate()?;
        if self.dist.dim() != self.model.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.model.input_dim(), found: self.dist.dim() });
        }
        if self.attack.needs_validation() && f.n_validation == 0 {
            return Err(Error::config("this attack needs n_validation >= 1"));
        }
        let classifier = matches!(self.model, TargetModel::LinearClassifier { .. });
        for &b in &f.budgets {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::config(format!("budget {b} must be finite and >= 0")));
            }
            if classifier && b > 1.0 {
                return Err(Error::config(format!("zero-one budget {b} exceeds 1")));
            }
        }
        let attack_ok = match (&self.attack, &self.model) {
            (AttackSpec::PolyGic { .. }, TargetModel::Polynomial(_)) => true,
            (AttackSpec::PolyGic { .. }, _) => false,
            (AttackSpec::Lasso(_) | AttackSpec::ElasticNet(_), m) => m.is_regression(),
            (AttackSpec::LinearClassErm(_), TargetModel::LinearClassifier { .. }) => true,
            (AttackSpec::LinearClassErm(_), _) => false,
            (AttackSpec::Knn { .. }, TargetModel::LinearClassifier { .. }) => {
                matches!(self.attack, AttackSpec::Knn { k: KChoice::Fixed(_) })
            }
            (AttackSpec::Knn { .. }, _) => true,
        };
        if !attack_ok {
            return Err(Error::config(format!("attack '{}' cannot rebuild this target model", self.attack.name())));
        }
        let mut labels = BTreeSet::new();
        for entry in &f.defenses {
            if !labels.insert(entry.label.as_str()) {
                return Err(Error::config(format!("duplicate defense label '{}'", entry.label)));
            }
            if entry.label.is_empty() || entry.label.contains([',', '"', '\n']) {
                return Err(Error::config(format!("defense label '{}' is not a plain name", entry.label)));
            }
            entry.defense.resolve_fixed()?.check_compatible(&self.model)?;
        }
        Ok(())
    }

    /// Resolves every defense at every budget (calibrating where needed).
    pub fn resolve_defenses(&self, budget: f64) -> Vec<Result<DefenseSpec>> {
        let seed = replicate_seed(self.file.seed, 0, budget, 0, Role::Calibration);
        self.file.defenses.iter().map(|e| e.defense.resolve(&self.model, &self.dist, budget, seed)).collect()
    }

    /// The file with the effective seed and replicate count, as TOML.
    pub fn effective_toml(&self) -> Result<String> {
        toml::to_string(&self.file).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
id = "tiny"
seed = 1
replicates = 2
n_values = [20]
budgets = [0.25]

[target]
kind = "polynomial"
coefficients = [1.0, -4.0, 4.0]

[queries]
kind = "beta"
alpha = 1.0
beta = 3.0

[attack]
kind = "poly_gic"

[[defenses]]
kind = "none"

[[defenses]]
kind = "long_range"
label = "lr02"
"#;

    #[test]
    fn parses_minimal() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.file.n_test, 1000);
        assert_eq!(s.file.defenses[0].label, "none");
        assert_eq!(s.file.defenses[1].label, "lr02");
        assert_eq!(s.file.defenses[1].defense, DefenseConfig::LongRange { gamma: 0.2, ordering_coordinate: 0 });
        assert!(matches!(
            s.attack,
            AttackSpec::PolyGic { criterion: InformationCriterion::Aic, max_order: MaxOrderRule::CubeRoot, .. }
        ));
    }

    #[test]
    fn effective_toml_round_trips() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        let text = s.effective_toml().unwrap();
        let again = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(again.file, s.file);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            MINIMAL.replace("schema_version = 1", "schema_version = 9"),
            MINIMAL.replace("schema_version = 1", ""),
            MINIMAL.replace("replicates = 2", "replicates = 0"),
            MINIMAL.replace("budgets = [0.25]", "budgets = [-1.0]"),
            MINIMAL.replace("kind = \"poly_gic\"", "kind = \"poly_gic\"\nbogus = 3"),
            MINIMAL.replace("label = \"lr02\"", "label = \"none\""),
            MINIMAL.replace("kind = \"long_range\"", "kind = \"long_range\"\ngamma = 1.5"),
            MINIMAL.replace("kind = \"none\"", "kind = \"mvp\""),
            MINIMAL.replace("kind = \"beta\"", "kind = \"uniform\"\nd = 2").replace("alpha = 1.0\nbeta = 3.0\n", ""),
            MINIMAL.replace("n_values = [20]", "n_values = [20, 20]"),
            "not toml [".to_string(),
        ];
        for (i, text) in cases.iter().enumerate() {
            let err = Scenario::from_toml_str(text).expect_err(&format!("case {i} should fail"));
            assert!(err.is_config(), "case {i}: {err}");
        }
    }

    #[test]
    fn boundary_shift_calibrates_per_budget() {
        let text = r#"
schema_version = 1
id = "cls"
seed = 3
replicates = 1
n_values = [100]
budgets = [0.2]
[target]
kind = "linear_classifier"
beta = [1.0, -1.0]
[queries]
kind = "uniform"
d = 2
[attack]
kind = "linear_erm"
[[defenses]]
kind = "boundary_shift"
"#;
        let s = Scenario::from_toml_str(text).unwrap();
        let resolved = s.resolve_defenses(0.2);
        let DefenseSpec::BoundaryShift { shift } = resolved[0].as_ref().unwrap() else { panic!() };
        // Flip mass s - s^2/2 = 0.2 for the triangular score density.
        assert!((shift.abs() - (1.0 - 0.6f64.sqrt())).abs() < 0.01, "{shift}");
    }

    #[test]
    fn figure_ids() {
        for f in FigureId::ALL {
            assert_eq!(FigureId::parse(f.as_str()).unwrap(), f);
        }
        assert!(FigureId::parse("nope").is_err());
    }
}
