//! Monte Carlo privacy-level estimation and related metrics.

use std::collections::BTreeSet;

use log::warn;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::attackers::{attack, AttackContext, AttackSpec};
use crate::defenses::{defend, DefenseSpec};
use crate::error::{Error, Result};
use crate::model::{empirical_utility_loss, evaluate_target, FittedModel, QuerySet, TargetModel, UtilityBudget};
use crate::seeds::{replicate_seed, Role};
use crate::targets::{sample_queries, QueryDistribution};

/// Everything needed to run one replicate of a `(defense, n, U_n)` cell.
#[derive(Debug, Clone)]
pub struct Trial {
    pub model: TargetModel,
    pub dist: QueryDistribution,
    pub defense: DefenseSpec,
    pub attack: AttackSpec,
    pub n: usize,
    pub budget: f64,
    pub n_test: usize,
    /// Clean validation points for attacks that tune on them.
    pub n_validation: usize,
}

impl Trial {
    pub fn validate(&self) -> Result<()> {
        if self.n_test == 0 {
            return Err(Error::config("need at least one test point"));
        }
        if self.n == 0 {
            return Err(Error::config("need at least one query"));
        }
        self.dist.validate()?;
        if self.dist.dim() != self.model.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.model.input_dim(), found: self.dist.dim() });
        }
        self.defense.validate()?;
        self.defense.check_compatible(&self.model)?;
        self.attack.validate()?;
        if self.attack.needs_validation() && self.n_validation == 0 {
            return Err(Error::config(format!("attack '{}' needs validation points", self.attack.name())));
        }
        self.budget()?;
        Ok(())
    }

    fn budget(&self) -> Result<UtilityBudget> {
        match self.model {
            TargetModel::LinearClassifier { .. } => UtilityBudget::zero_one(self.budget),
            _ => UtilityBudget::new(self.budget),
        }
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrivacySample {
    pub replicate: usize,
    /// Test loss of the rebuilt model against the target; `None` if the
    /// replicate failed.
    pub privacy: Option<f64>,
    pub utility_loss: Option<f64>,
    pub symmetric_difference: Option<usize>,
    pub selected_order: Option<usize>,
    pub selected_variables: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

/// `|a \ b| + |b \ a|`.
pub fn symmetric_difference(truth: &[usize], estimate: &[usize]) -> usize {
    let a: BTreeSet<usize> = truth.iter().copied().collect();
    let b: BTreeSet<usize> = estimate.iter().copied().collect();
    a.symmetric_difference(&b).count()
}

/// Fraction of test queries where `classifier` and `truth` disagree.
pub fn zero_one_error(classifier: &FittedModel, truth: &TargetModel, test: &QuerySet) -> Result<f64> {
    let predicted = classifier.predict(test)?;
    let expected = evaluate_target(truth, test)?;
    empirical_utility_loss(&expected, &predicted, crate::model::LossFunction::ZeroOne)
}

/// Mean test loss of `fitted` against `model` on `test`, using the target's
/// natural loss.
pub fn test_loss(fitted: &FittedModel, model: &TargetModel, test: &QuerySet) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::config("need at least one test point"));
    }
    let predicted = fitted.predict(test)?;
    let expected = evaluate_target(model, test)?;
    empirical_utility_loss(&expected, &predicted, model.natural_loss())
}

/// Runs query sampling, defense, attack and evaluation for one replicate.
/// Errors in any stage are recorded in the sample.
pub fn run_replicate(trial: &Trial, master_seed: u64, replicate: usize) -> PrivacySample {
    let mut sample = PrivacySample { replicate, ..Default::default() };
    if let Err(err) = replicate_into(trial, master_seed, replicate, &mut sample) {
        warn!(
            "replicate {replicate} ({} / {}, n={}, U={}) failed: {err}",
            trial.defense.name(),
            trial.attack.name(),
            trial.n,
            trial.budget
        );
        sample.privacy = None;
        sample.error = Some(err.to_string());
    }
    sample
}

fn replicate_into(trial: &Trial, master: u64, replicate: usize, out: &mut PrivacySample) -> Result<()> {
    let seed = |role| replicate_seed(master, trial.n, trial.budget, replicate, role);
    let budget = trial.budget()?;
    let queries = sample_queries(&trial.dist, trial.n, seed(Role::Queries))?;
    let clean = evaluate_target(&trial.model, &queries)?;
    let responses = defend(&trial.defense, &trial.model, &queries, budget, seed(Role::Defense))?;
    out.utility_loss = Some(empirical_utility_loss(&clean, &responses, trial.model.natural_loss())?);

    let validation = if trial.attack.needs_validation() {
        let vq = sample_queries(&trial.dist, trial.n_validation, seed(Role::Validation))?;
        let vy = evaluate_target(&trial.model, &vq)?;
        Some((vq, vy))
    } else {
        None
    };
    let ctx = AttackContext { seed: seed(Role::Attack), validation };
    let fitted = attack(&trial.attack, &queries, &responses, &ctx)?;
    out.selected_order = fitted.metadata.selected_order;
    out.k = fitted.metadata.k;
    out.converged = Some(fitted.metadata.converged);
    if let Some(selected) = &fitted.metadata.selected_variables {
        if let TargetModel::Linear { beta } = &trial.model {
            let truth: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
            out.symmetric_difference = Some(symmetric_difference(&truth, selected));
        }
        out.selected_variables = Some(selected.clone());
    }

    let test = sample_queries(&trial.dist, trial.n_test, seed(Role::Test))?;
    out.privacy = Some(test_loss(&fitted, &trial.model, &test)?);
    Ok(())
}

/// Runs `replicates` replicates, concurrently when the `parallel` feature is on.
pub fn run_replicates(trial: &Trial, master_seed: u64, replicates: usize) -> Vec<PrivacySample> {
    #[cfg(feature = "parallel")]
    {
        (0..replicates).into_par_iter().map(|r| run_replicate(trial, master_seed, r)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_replicates_sequential(trial, master_seed, replicates)
    }
}

pub fn run_replicates_sequential(trial: &Trial, master_seed: u64, replicates: usize) -> Vec<PrivacySample> {
    (0..replicates).map(|r| run_replicate(trial, master_seed, r)).collect()
}

/// Mean and standard error of the mean; the SE is 0 for a single value.
pub fn mean_and_se(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Some((mean, (var / m).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: Vec<PrivacySample>,
    pub failures: usize,
}

impl PrivacyEstimate {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.privacy).collect()
    }

    /// Mean and SE of the symmetric differences, when recorded.
    pub fn symmetric_difference(&self) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.samples.iter().filter_map(|s| s.symmetric_difference.map(|d| d as f64)).collect();
        mean_and_se(&v)
    }
}

/// Monte Carlo estimate of the fixed-attack privacy level.
pub fn privacy_level_estimate(trial: &Trial, replicates: usize, master_seed: u64) -> Result<PrivacyEstimate> {
    trial.validate()?;
    if replicates == 0 {
        return Err(Error::config("need at least one replicate"));
    }
    let samples = run_replicates(trial, master_seed, replicates);
    let values: Vec<f64> = samples.iter().filter_map(|s| s.privacy).collect();
    let failures = samples.len() - values.len();
    let (mean, se) = mean_and_se(&values).ok_or_else(|| Error::Fit(format!("all {replicates} replicates failed")))?;
    Ok(PrivacyEstimate { mean, se, samples, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attackers::{InformationCriterion, MaxOrderRule, VarianceRule};
    use crate::model::Predictor;
    use crate::targets::make_poly_scenario_target;

    #[test]
    fn symmetric_difference_examples() {
        assert_eq!(symmetric_difference(&[1, 2, 3], &[1, 2, 3]), 0);
        let all: Vec<usize> = (1..=15).collect();
        assert_eq!(symmetric_difference(&all, &[]), 15);
        assert_eq!(symmetric_difference(&[1, 2, 3], &[3, 4]), 3);
    }

    #[test]
    fn zero_one_examples() {
        let truth = TargetModel::linear_classifier(vec![1.0]).unwrap();
        let test = QuerySet::from_scalars((0..100).map(|i| i as f64 / 50.0 - 1.0).collect()).unwrap();
        let same = FittedModel::new(Predictor::Halfspace { weights: vec![1.0], bias: 0.0 }, Default::default());
        assert_eq!(zero_one_error(&same, &truth, &test).unwrap(), 0.0);
        let flipped = FittedModel::new(Predictor::Halfspace { weights: vec![-1.0], bias: -1e-9 }, Default::default());
        assert_eq!(zero_one_error(&flipped, &truth, &test).unwrap(), 1.0);
    }

    #[test]
    fn threshold_disagreement_measure() {
        let n = 100_000;
        let test = sample_queries(&QueryDistribution::UniformCube { d: 1 }, n, 3).unwrap();
        // 1{x >= 0.4} vs 1{x >= 0.5}.
        let truth = TargetModel::linear_classifier(vec![1.0]).unwrap();
        let a = FittedModel::new(Predictor::Halfspace { weights: vec![1.0], bias: -0.4 }, Default::default());
        let b = FittedModel::new(Predictor::Halfspace { weights: vec![1.0], bias: -0.5 }, Default::default());
        let pa = a.predict(&test).unwrap();
        let pb = b.predict(&test).unwrap();
        let err = empirical_utility_loss(&pa, &pb, crate::model::LossFunction::ZeroOne).unwrap();
        let se = (0.1 * 0.9 / n as f64).sqrt();
        assert!((err - 0.1).abs() < 3.0 * se, "{err}");
        assert!(zero_one_error(&a, &truth, &test).is_ok());
    }

    fn poly_trial(defense: DefenseSpec, n: usize, budget: f64) -> Trial {
        Trial {
            model: make_poly_scenario_target(),
            dist: QueryDistribution::Beta { alpha: 1.0, beta: 3.0 },
            defense,
            attack: AttackSpec::PolyGic {
                max_order: MaxOrderRule::CubeRoot,
                criterion: InformationCriterion::Aic,
                variance: VarianceRule::LargestModel,
            },
            n,
            budget,
            n_test: 1000,
            n_validation: 0,
        }
    }

    #[test]
    fn no_defense_exact_recovery() {
        let est = privacy_level_estimate(&poly_trial(DefenseSpec::NoDefense, 20, 0.25), 10, 1).unwrap();
        assert!(est.mean <= 1e-8, "{}", est.mean);
        assert_eq!(est.failures, 0);
    }

    #[test]
    fn reproducible_samples() {
        let t = poly_trial(DefenseSpec::IidNoising, 50, 0.25);
        let a = privacy_level_estimate(&t, 5, 9).unwrap();
        let b = privacy_level_estimate(&t, 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(run_replicates_sequential(&t, 9, 5), a.samples);
    }

    #[test]
    fn zero_test_points_rejected() {
        let mut t = poly_trial(DefenseSpec::NoDefense, 20, 0.0);
        t.n_test = 0;
        assert!(privacy_level_estimate(&t, 1, 1).is_err());
    }

    #[test]
    fn fit_errors_are_recorded() {
        // Order 5 needs at least six queries.
        let t = poly_trial(DefenseSpec::NoDefense, 4, 0.0);
        let t = Trial {
            attack: AttackSpec::PolyGic {
                max_order: MaxOrderRule::Fixed(5),
                criterion: InformationCriterion::Aic,
                variance: VarianceRule::LargestModel,
            },
            ..t
        };
        let s = run_replicate(&t, 1, 0);
        assert!(s.privacy.is_none() && s.error.is_some());
        assert!(privacy_level_estimate(&t, 2, 1).is_err());
    }
}
