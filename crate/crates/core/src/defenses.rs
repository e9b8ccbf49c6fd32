//! Defense mechanisms: maps from (f*, queries, budget) to perturbed responses.
//!
//! Regression defenses spend the budget as mean squared perturbation, so a
//! deterministic perturbation `e` satisfies `||e||^2 = n * U_n`. Hard-label
//! defenses spend it as a flip probability.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attackers::MaxOrderRule;
use crate::error::{Error, Result};
use crate::model::{dot, evaluate_target, softmax, QuerySet, ResponseVector, TargetModel, UtilityBudget};
use crate::noise::{assign_noise_by_query_order, sample_iid_gaussian, sample_long_range};
use crate::numerics::{polynomial_features, DesignMatrix, LeastSquares};
use crate::targets::{sample_queries, QueryDistribution};

/// Log clamp applied before the Misleading Shift logit transform.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// How Order Disguise chooses the polynomial order it imitates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetOrderRule {
    /// `k = min(q_n - 1, max(p + 1, ceil(multiplier * ln n)))`.
    LogN {
        multiplier: f64,
    },
    /// `k = min(q_n - 1, max(p + 1, floor(n^(1/delta))))`, suited to Beta queries.
    Power {
        delta: f64,
    },
    Fixed(usize),
}

impl Default for TargetOrderRule {
    fn default() -> Self {
        TargetOrderRule::LogN { multiplier: 4.0 }
    }
}

impl TargetOrderRule {
    pub fn target_order(&self, n: usize, true_order: usize, max_order: usize) -> usize {
        let nf = n as f64;
        let raw = match *self {
            TargetOrderRule::LogN { multiplier } => (multiplier * nf.ln()).ceil() as usize,
            TargetOrderRule::Power { delta } => nf.powf(1.0 / delta).floor() as usize,
            TargetOrderRule::Fixed(k) => return k,
        };
        raw.max(true_order + 1).min(max_order.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DefenseSpec {
    NoDefense,
    IidNoising,
    ConstantNoising {
        sign: Sign,
    },
    LongRangeNoising {
        gamma: f64,
        ordering_coordinate: usize,
    },
    OrderDisguise {
        order_rule: TargetOrderRule,
        max_order: MaxOrderRule,
    },
    /// Misleading Variable Projection.
    Mvp {
        rho: f64,
    },
    RandomShuffle {
        xi: f64,
    },
    LabelFlip,
    BoundaryShift {
        shift: f64,
    },
    MisleadingShift {
        delta: f64,
    },
}

impl DefenseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::NoDefense => "none",
            DefenseSpec::IidNoising => "iid",
            DefenseSpec::ConstantNoising { .. } => "constant",
            DefenseSpec::LongRangeNoising { .. } => "long_range",
            DefenseSpec::OrderDisguise { .. } => "order_disguise",
            DefenseSpec::Mvp { .. } => "mvp",
            DefenseSpec::RandomShuffle { .. } => "random_shuffle",
            DefenseSpec::LabelFlip => "label_flip",
            DefenseSpec::BoundaryShift { .. } => "boundary_shift",
            DefenseSpec::MisleadingShift { .. } => "misleading_shift",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DefenseSpec::LongRangeNoising { gamma, .. } if !(gamma > 0.0 && gamma < 1.0) => {
                Err(Error::config(format!("long-range gamma must lie in (0, 1), got {gamma}")))
            }
            DefenseSpec::Mvp { rho } if !(rho > 0.0 && rho <= 1.0) => {
                Err(Error::config(format!("MVP sampling ratio must lie in (0, 1], got {rho}")))
            }
            DefenseSpec::RandomShuffle { xi } if !(0.0..=1.0).contains(&xi) => {
                Err(Error::config(format!("shuffle probability must lie in [0, 1], got {xi}")))
            }
            DefenseSpec::BoundaryShift { shift } if !shift.is_finite() => {
                Err(Error::config("boundary shift must be finite"))
            }
            DefenseSpec::MisleadingShift { delta } if !(delta >= 0.0) => {
                Err(Error::config(format!("misleading shift scale must be >= 0, got {delta}")))
            }
            DefenseSpec::OrderDisguise { order_rule: TargetOrderRule::Power { delta }, .. } if !(delta > 1.0) => {
                Err(Error::config("order-disguise power rule needs delta > 1"))
            }
            _ => Ok(()),
        }
    }

    /// Checks that the defense can protect `model`.
    pub fn check_compatible(&self, model: &TargetModel) -> Result<()> {
        let ok = match self {
            DefenseSpec::NoDefense => true,
            DefenseSpec::IidNoising | DefenseSpec::ConstantNoising { .. } | DefenseSpec::LongRangeNoising { .. } => {
                model.is_regression()
            }
            DefenseSpec::OrderDisguise { .. } => matches!(model, TargetModel::Polynomial(_)),
            DefenseSpec::Mvp { .. } => matches!(model, TargetModel::Linear { .. }),
            DefenseSpec::LabelFlip | DefenseSpec::BoundaryShift { .. } => {
                matches!(model, TargetModel::LinearClassifier { .. })
            }
            DefenseSpec::RandomShuffle { .. } | DefenseSpec::MisleadingShift { .. } => {
                matches!(model, TargetModel::ProbClassifier(_))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("defense '{}' cannot be applied to this target model", self.name())))
        }
    }

    /// Whether the realized utility loss equals the budget exactly.
    pub fn is_budget_exact(&self) -> bool {
        matches!(
            self,
            DefenseSpec::NoDefense
                | DefenseSpec::ConstantNoising { .. }
                | DefenseSpec::OrderDisguise { .. }
                | DefenseSpec::Mvp { .. }
        )
    }
}

/// Perturbed responses for `queries` under `spec`. Deterministic defenses
/// ignore `seed`.
pub fn defend(
    spec: &DefenseSpec,
    model: &TargetModel,
    queries: &QuerySet,
    budget: UtilityBudget,
    seed: u64,
) -> Result<ResponseVector> {
    spec.validate()?;
    spec.check_compatible(model)?;
    let n = queries.n();
    match *spec {
        DefenseSpec::NoDefense => evaluate_target(model, queries),
        DefenseSpec::IidNoising => {
            let noise = sample_iid_gaussian(n, budget.value(), seed);
            add_noise(model, queries, &noise)
        }
        DefenseSpec::ConstantNoising { sign } => {
            let noise = vec![sign.value() * budget.value().sqrt(); n];
            add_noise(model, queries, &noise)
        }
        DefenseSpec::LongRangeNoising { gamma, ordering_coordinate } => {
            let raw = sample_long_range(n, budget.value(), gamma, seed)?;
            let noise = assign_noise_by_query_order(&raw, queries, ordering_coordinate)?;
            add_noise(model, queries, &noise)
        }
        DefenseSpec::OrderDisguise { order_rule, max_order } => {
            let TargetModel::Polynomial(p) = model else { unreachable!("compatibility checked") };
            let k = order_rule.target_order(n, p.order(), max_order.max_order(n));
            order_disguise(model, queries, budget, k)
        }
        DefenseSpec::Mvp { rho } => mvp(model, queries, budget, rho, seed),
        DefenseSpec::RandomShuffle { xi } => Ok(random_shuffle_traced(model, queries, xi, seed)?.0),
        DefenseSpec::LabelFlip => label_flip(model, queries, budget.value(), seed),
        DefenseSpec::BoundaryShift { shift } => boundary_shift(model, queries, shift),
        DefenseSpec::MisleadingShift { delta } => misleading_shift(model, queries, delta),
    }
}

fn add_noise(model: &TargetModel, queries: &QuerySet, noise: &[f64]) -> Result<ResponseVector> {
    let clean = evaluate_target(model, queries)?;
    let y = clean.as_regression()?;
    Ok(ResponseVector::Regression(y.iter().zip(noise).map(|(a, e)| a + e).collect()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Order Disguise: perturb along a high-order polynomial direction so a
/// polynomial-regression attacker selects order `k`.
pub fn order_disguise(
    model: &TargetModel,
    queries: &QuerySet,
    budget: UtilityBudget,
    target_order: usize,
) -> Result<ResponseVector> {
    let TargetModel::Polynomial(p) = model else {
        return Err(Error::config("order disguise needs a polynomial target"));
    };
    if queries.d() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: queries.d() });
    }
    if target_order < p.order() {
        return Err(Error::config(format!("target order {target_order} is below the model order {}", p.order())));
    }
    let clean = evaluate_target(model, queries)?;
    let y = clean.as_regression()?;
    let e = order_disguise_direction(&queries.column(0), target_order)?;
    let b = budget.perturbation_norm(queries.n());
    Ok(ResponseVector::Regression(y.iter().zip(&e).map(|(a, v)| a + b * v).collect()))
}

/// Unit-norm perturbation direction `e1/||e1|| + e2/||e2||`, normalized,
/// where `e1 = Phi_k u` and `e2 = Phi_k (Phi_k^T Phi_k)^{-1} u` with `u` the
/// last standard basis vector.
pub fn order_disguise_direction(xs: &[f64], k: usize) -> Result<Vec<f64>> {
    let design = polynomial_features(xs, k);
    let ls = LeastSquares::new(&design)?;
    let mut u = vec![0.0; k + 1];
    u[k] = 1.0;
    let e1: Vec<f64> = xs.iter().map(|x| x.powi(k as i32)).collect();
    let e2 = ls.gram_inverse_image(&u);
    let (n1, n2) = (norm(&e1), norm(&e2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::SingularDesign { condition: f64::INFINITY });
    }
    let e: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a / n1 + b / n2).collect();
    let ne = norm(&e);
    if ne == 0.0 {
        return Err(Error::DegenerateTarget("order-disguise directions cancel".into()));
    }
    Ok(e.into_iter().map(|v| v / ne).collect())
}

/// Columns whose coefficient is exactly zero, subsampled to a `rho` fraction.
pub fn mvp_columns(beta: &[f64], rho: f64, seed: u64) -> Result<Vec<usize>> {
    let zeros: Vec<usize> = beta.iter().enumerate().filter(|(_, b)| **b == 0.0).map(|(j, _)| j).collect();
    if zeros.is_empty() {
        return Err(Error::config("MVP needs at least one zero coefficient"));
    }
    let keep = ((rho * zeros.len() as f64).ceil() as usize).clamp(1, zeros.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, zeros.len(), keep).into_iter().map(|i| zeros[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Misleading Variable Projection: pull responses toward the span of a
/// sampled set of non-significant columns while spending exactly the budget.
pub fn mvp(
    model: &TargetModel,
    queries: &QuerySet,
    budget: UtilityBudget,
    rho: f64,
    seed: u64,
) -> Result<ResponseVector> {
    let TargetModel::Linear { beta } = model else {
        return Err(Error::config("MVP needs a linear target"));
    };
    DefenseSpec::Mvp { rho }.validate()?;
    let clean = evaluate_target(model, queries)?;
    let y = clean.as_regression()?;
    let y_norm = norm(y);
    if y_norm == 0.0 {
        return Err(Error::DegenerateTarget("all target responses are zero".into()));
    }
    let columns = mvp_columns(beta, rho, seed)?;
    let design = DesignMatrix::new(queries.to_matrix())?.select_columns(&columns);
    let projected = LeastSquares::new(&design)?.project(y);
    let e = mvp_perturbation(y, &projected, budget.perturbation_norm(queries.n()));
    Ok(ResponseVector::Regression(y.iter().zip(&e).map(|(a, v)| a + v).collect()))
}

/// Perturbation of norm `b` built from `u = projected - y`: `b u / ||u||` when
/// that fits the budget, otherwise `u + t y/||y||` with `t >= 0` chosen so the
/// norm is exactly `b`.
pub fn mvp_perturbation(y: &[f64], projected: &[f64], b: f64) -> Vec<f64> {
    let u: Vec<f64> = projected.iter().zip(y).map(|(p, v)| p - v).collect();
    let c = norm(&u);
    if b <= c {
        if c == 0.0 {
            return vec![0.0; y.len()];
        }
        return u.iter().map(|v| b * v / c).collect();
    }
    let y_norm = norm(y);
    let v: Vec<f64> = y.iter().map(|a| a / y_norm).collect();
    // ||u + t v||^2 = b^2  <=>  t^2 + 2 (u.v) t + c^2 - b^2 = 0.
    let uv = dot(&u, &v);
    let t = -uv + (uv * uv + b * b - c * c).sqrt();
    u.iter().zip(&v).map(|(a, w)| a + t * w).collect()
}

/// Random Shuffle. Also returns which rows drew the shuffle event (the drawn
/// permutation may still be the identity).
pub fn random_shuffle_traced(
    model: &TargetModel,
    queries: &QuerySet,
    xi: f64,
    seed: u64,
) -> Result<(ResponseVector, Vec<bool>)> {
    DefenseSpec::RandomShuffle { xi }.validate()?;
    let clean = evaluate_target(model, queries)?;
    let ResponseVector::Probabilities { classes, mut values } = clean else {
        return Err(Error::config("random shuffle needs a probability classifier"));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::with_capacity(queries.n());
    for row in values.chunks_exact_mut(classes) {
        let hit = rng.random_bool(xi);
        if hit {
            row.shuffle(&mut rng);
        }
        events.push(hit);
    }
    Ok((ResponseVector::Probabilities { classes, values }, events))
}

pub fn random_shuffle(model: &TargetModel, queries: &QuerySet, xi: f64, seed: u64) -> Result<ResponseVector> {
    Ok(random_shuffle_traced(model, queries, xi, seed)?.0)
}

/// Class that is the argmax for the most queries (ties: smallest index).
pub fn dominating_class(responses: &ResponseVector) -> Result<usize> {
    let ResponseVector::Probabilities { classes, values } = responses else {
        return Err(Error::config("expected probability responses"));
    };
    let mut counts = vec![0usize; *classes];
    for row in values.chunks_exact(*classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (c, &p) in counts.iter_mut().zip(row) {
            if p == max {
                *c += 1;
            }
        }
    }
    let best = counts.iter().max().copied().unwrap_or(0);
    Ok(counts.iter().position(|&c| c == best).unwrap_or(0))
}

/// Misleading Shift: `softmax(log f*(x) + delta * e_k)` with `k` the
/// dominating class among the queries.
pub fn misleading_shift(model: &TargetModel, queries: &QuerySet, delta: f64) -> Result<ResponseVector> {
    DefenseSpec::MisleadingShift { delta }.validate()?;
    let clean = evaluate_target(model, queries)?;
    let k = dominating_class(&clean)?;
    let ResponseVector::Probabilities { classes, values } = clean else { unreachable!() };
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks_exact(classes) {
        let logits: Vec<f64> =
            row.iter().enumerate().map(|(j, p)| p.max(LOG_CLAMP).ln() + if j == k { delta } else { 0.0 }).collect();
        out.extend(softmax(&logits));
    }
    Ok(ResponseVector::Probabilities { classes, values: out })
}

/// Flips each hard label independently with probability `flip_prob`.
pub fn label_flip(model: &TargetModel, queries: &QuerySet, flip_prob: f64, seed: u64) -> Result<ResponseVector> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::config(format!("flip probability must lie in [0, 1], got {flip_prob}")));
    }
    let clean = evaluate_target(model, queries)?;
    let labels = clean.as_labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ResponseVector::Labels(labels.iter().map(|&l| if rng.random_bool(flip_prob) { 1 - l } else { l }).collect()))
}

/// Labels from the shifted boundary `x^T beta + shift >= 0`.
pub fn boundary_shift(model: &TargetModel, queries: &QuerySet, shift: f64) -> Result<ResponseVector> {
    let TargetModel::LinearClassifier { beta } = model else {
        return Err(Error::config("boundary shift needs a linear classifier"));
    };
    if queries.d() != beta.len() {
        return Err(Error::DimensionMismatch { expected: beta.len(), found: queries.d() });
    }
    Ok(ResponseVector::Labels(queries.rows().map(|r| u8::from(dot(beta, r) + shift >= 0.0)).collect()))
}

/// Monte Carlo queries used by [`calibrate_boundary_shift`].
pub const CALIBRATION_QUERIES: usize = 100_000;

/// Finds a boundary shift whose flip fraction under `dist` is within
/// `tolerance` of `target` by bisection on `|shift|`.
pub fn calibrate_boundary_shift(
    model: &TargetModel,
    dist: &QueryDistribution,
    target: f64,
    tolerance: f64,
    seed: u64,
) -> Result<f64> {
    let TargetModel::LinearClassifier { beta } = model else {
        return Err(Error::config("boundary shift needs a linear classifier"));
    };
    if !(0.0..0.5).contains(&target) {
        return Err(Error::Calibration(format!("target flip fraction {target} outside [0, 0.5)")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let queries = sample_queries(dist, CALIBRATION_QUERIES, seed)?;
    if queries.d() != beta.len() {
        return Err(Error::DimensionMismatch { expected: beta.len(), found: queries.d() });
    }
    let scores: Vec<f64> = queries.rows().map(|r| dot(beta, r)).collect();
    let flip_fraction =
        |s: f64| scores.iter().filter(|&&v| (v >= 0.0) != (v + s >= 0.0)).count() as f64 / scores.len() as f64;
    let reach = scores.iter().map(|v| v.abs()).fold(0.0, f64::max) + 1.0;
    let mut signs = [(1.0, flip_fraction(reach)), (-1.0, flip_fraction(-reach))];
    // Try the direction that can flip more labels first.
    signs.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (sign, saturation) in signs {
        if saturation + tolerance < target {
            continue;
        }
        let (mut lo, mut hi) = (0.0, reach);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = flip_fraction(sign * mid);
            if (f - target).abs() <= tolerance {
                return Ok(sign * mid);
            }
            if f < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Err(Error::Calibration(format!("flip fraction cannot reach {target}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::empirical_utility_loss;
    use crate::targets::{make_poly_scenario_target, make_prob_classifier};

    fn beta_queries(n: usize, seed: u64) -> QuerySet {
        sample_queries(&QueryDistribution::Beta { alpha: 1.0, beta: 3.0 }, n, seed).unwrap()
    }

    fn budget(u: f64) -> UtilityBudget {
        UtilityBudget::new(u).unwrap()
    }

    fn loss(model: &TargetModel, q: &QuerySet, y: &ResponseVector) -> f64 {
        empirical_utility_loss(&evaluate_target(model, q).unwrap(), y, model.natural_loss()).unwrap()
    }

    #[test]
    fn no_defense_is_clean() {
        let model = make_poly_scenario_target();
        let q = beta_queries(30, 1);
        let y = defend(&DefenseSpec::NoDefense, &model, &q, budget(0.25), 0).unwrap();
        assert_eq!(y, evaluate_target(&model, &q).unwrap());
    }

    #[test]
    fn constant_noising_adds_root_budget() {
        let model = make_poly_scenario_target();
        let q = beta_queries(30, 1);
        let clean = evaluate_target(&model, &q).unwrap();
        let y = defend(&DefenseSpec::ConstantNoising { sign: Sign::Plus }, &model, &q, budget(0.25), 0).unwrap();
        for (a, b) in clean.as_regression().unwrap().iter().zip(y.as_regression().unwrap()) {
            assert!((b - a - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn iid_noising_budget_in_expectation() {
        let model = make_poly_scenario_target();
        let q = beta_queries(10_000, 2);
        let y = defend(&DefenseSpec::IidNoising, &model, &q, budget(0.25), 3).unwrap();
        // mean of e^2 with e ~ N(0, 0.25): SE = 0.25 * sqrt(2 / n).
        let se = 0.25 * (2.0f64 / 10_000.0).sqrt();
        assert!((loss(&model, &q, &y) - 0.25).abs() < 3.0 * se);
    }

    #[test]
    fn order_disguise_exact_budget_and_span() {
        let model = make_poly_scenario_target();
        let q = beta_queries(100, 4);
        for u in [0.0, 0.01, 0.25, 1.0] {
            let y = order_disguise(&model, &q, budget(u), 4).unwrap();
            let l = loss(&model, &q, &y);
            assert!((l - u).abs() <= 1e-9 * u.max(1e-300), "{l} vs {u}");
        }
        let e = order_disguise_direction(&q.column(0), 4).unwrap();
        let projected = LeastSquares::new(&polynomial_features(&q.column(0), 4)).unwrap().project(&e);
        let resid: f64 = e.iter().zip(&projected).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(resid <= 1e-8 * norm(&e));
    }

    #[test]
    fn order_disguise_rank_deficient() {
        let model = make_poly_scenario_target();
        let q = QuerySet::from_scalars(vec![0.1, 0.2, 0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(order_disguise(&model, &q, budget(0.25), 4), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn order_rule_defaults() {
        let rule = TargetOrderRule::default();
        // n = 100: q_n = 5 and ceil(4 ln 100) = 19, so k = q_n - 1.
        assert_eq!(rule.target_order(100, 2, 5), 4);
        assert_eq!(rule.target_order(20, 2, 3), 2);
        assert_eq!(TargetOrderRule::Fixed(6).target_order(100, 2, 5), 6);
    }

    fn linear_model() -> TargetModel {
        TargetModel::linear(vec![1.0, -2.0, 0.0, 0.0, 0.0, 0.0]).unwrap()
    }

    fn normal_queries(n: usize, d: usize, seed: u64) -> QuerySet {
        sample_queries(&QueryDistribution::StandardNormal { d }, n, seed).unwrap()
    }

    #[test]
    fn mvp_both_branches_spend_budget() {
        let model = linear_model();
        let q = normal_queries(30, 6, 5);
        for u in [0.01, 0.5, 5.0, 50.0] {
            let y = mvp(&model, &q, budget(u), 1.0, 9).unwrap();
            let l = loss(&model, &q, &y);
            assert!((l - u).abs() <= 1e-9 * u, "{l} vs {u}");
        }
    }

    #[test]
    fn mvp_first_branch_direction() {
        let y = [3.0, -1.0, 2.0, 0.5];
        let projected = [1.0, 0.0, 1.0, 0.0];
        let e = mvp_perturbation(&y, &projected, 0.5);
        let u: Vec<f64> = projected.iter().zip(&y).map(|(p, v)| p - v).collect();
        let cos = dot(&e, &u) / (norm(&e) * norm(&u));
        assert!((cos - 1.0).abs() < 1e-9);
        assert!((norm(&e) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mvp_target_in_span() {
        let y = [3.0, 4.0];
        let e = mvp_perturbation(&y, &y, 10.0);
        // Y + e = (1 + b/||Y||) Y with ||Y|| = 5.
        assert!((y[0] + e[0] - 9.0).abs() < 1e-12 && (y[1] + e[1] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn mvp_errors() {
        let q = normal_queries(10, 2, 1);
        let dense = TargetModel::linear(vec![1.0, 1.0]).unwrap();
        assert!(mvp(&dense, &q, budget(1.0), 1.0, 0).unwrap_err().is_config());
        let zero = TargetModel::linear(vec![0.0, 0.0]).unwrap();
        assert!(matches!(mvp(&zero, &q, budget(1.0), 1.0, 0), Err(Error::DegenerateTarget(_))));
    }

    #[test]
    fn mvp_subsample_size() {
        let beta = [1.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        assert_eq!(mvp_columns(&beta, 1.0, 3).unwrap(), vec![1, 2, 3, 4]);
        let half = mvp_columns(&beta, 0.5, 3).unwrap();
        assert_eq!(half.len(), 2);
        assert!(half.iter().all(|j| (1..5).contains(j)));
    }

    fn prob_model() -> TargetModel {
        make_prob_classifier(2, 2, 5).unwrap()
    }

    #[test]
    fn shuffle_extremes() {
        let model = prob_model();
        let q = normal_queries(200, 2, 3);
        let clean = evaluate_target(&model, &q).unwrap();
        assert_eq!(random_shuffle(&model, &q, 0.0, 1).unwrap(), clean);
        let y = random_shuffle(&model, &q, 1.0, 1).unwrap();
        let mut swapped = 0;
        for i in 0..q.n() {
            let (a, b) = (clean.prob_row(i).unwrap(), y.prob_row(i).unwrap());
            if a != b {
                assert_eq!((a[0], a[1]), (b[1], b[0]));
                swapped += 1;
            }
        }
        // Binomial(200, 1/2): 3 SE is about 21.
        assert!((swapped as f64 - 100.0).abs() < 22.0, "{swapped}");
    }

    #[test]
    fn shuffle_event_rate() {
        let model = make_prob_classifier(2, 3, 1).unwrap();
        let q = normal_queries(10_000, 2, 6);
        let (y, events) = random_shuffle_traced(&model, &q, 0.3, 2).unwrap();
        let rate = events.iter().filter(|&&e| e).count() as f64 / 1e4;
        let se = (0.3 * 0.7 / 1e4f64).sqrt();
        assert!((rate - 0.3).abs() < 3.0 * se);
        for i in 0..q.n() {
            assert!((y.prob_row(i).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn misleading_shift_cases() {
        let model = prob_model();
        let q = normal_queries(100, 2, 4);
        let clean = evaluate_target(&model, &q).unwrap();
        let same = misleading_shift(&model, &q, 0.0).unwrap();
        let ResponseVector::Probabilities { values: a, .. } = &clean else { unreachable!() };
        let ResponseVector::Probabilities { values: b, .. } = &same else { unreachable!() };
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));

        let k = dominating_class(&clean).unwrap();
        let shifted = misleading_shift(&model, &q, 1.5).unwrap();
        for i in 0..q.n() {
            assert!(shifted.prob_row(i).unwrap()[k] >= clean.prob_row(i).unwrap()[k]);
        }
        let saturated = misleading_shift(&model, &q, 1e3).unwrap();
        for i in 0..q.n() {
            assert!((saturated.prob_row(i).unwrap()[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn misleading_shift_hand_value() {
        // Row (0.5, 0.5): class 0 wins the tie; softmax(ln 0.5 + ln 3, ln 0.5) = (0.75, 0.25).
        let model = TargetModel::prob_classifier(vec![0.0, 0.0], vec![0.0, 0.0], 1).unwrap();
        let q = QuerySet::from_scalars(vec![1.0]).unwrap();
        let y = misleading_shift(&model, &q, 3f64.ln()).unwrap();
        let row = y.prob_row(0).unwrap();
        assert!((row[0] - 0.75).abs() < 1e-12 && (row[1] - 0.25).abs() < 1e-12);
    }

    fn threshold_model() -> TargetModel {
        TargetModel::linear_classifier(vec![1.0]).unwrap()
    }

    #[test]
    fn label_flip_extremes_and_rate() {
        let model = TargetModel::linear_classifier(vec![1.0, -1.0]).unwrap();
        let q = sample_queries(&QueryDistribution::UniformCube { d: 2 }, 10_000, 3).unwrap();
        let clean = evaluate_target(&model, &q).unwrap();
        assert_eq!(label_flip(&model, &q, 0.0, 1).unwrap(), clean);
        let all = label_flip(&model, &q, 1.0, 1).unwrap();
        assert!(all.as_labels().unwrap().iter().zip(clean.as_labels().unwrap()).all(|(a, b)| a != b));
        let y = label_flip(&model, &q, 0.2, 1).unwrap();
        let se = (0.2 * 0.8 / 1e4f64).sqrt();
        assert!((loss(&model, &q, &y) - 0.2).abs() < 3.0 * se);
    }

    #[test]
    fn boundary_shift_cases() {
        let model = TargetModel::linear_classifier(vec![1.0, -1.0]).unwrap();
        let q = sample_queries(&QueryDistribution::UniformCube { d: 2 }, 1000, 3).unwrap();
        assert_eq!(boundary_shift(&model, &q, 0.0).unwrap(), evaluate_target(&model, &q).unwrap());
        assert!(boundary_shift(&model, &q, 100.0).unwrap().as_labels().unwrap().iter().all(|&l| l == 1));

        // d = 1, beta = 1, X ~ U[0,1]: the shift s in (-1, 0] flips [0, -s).
        let model = threshold_model();
        let q = sample_queries(&QueryDistribution::UniformCube { d: 1 }, 100_000, 8).unwrap();
        let y = boundary_shift(&model, &q, -0.3).unwrap();
        let se = (0.3 * 0.7 / 1e5f64).sqrt();
        assert!((loss(&model, &q, &y) - 0.3).abs() < 3.0 * se);
    }

    #[test]
    fn calibration_cases() {
        let model = threshold_model();
        let dist = QueryDistribution::UniformCube { d: 1 };
        assert_eq!(calibrate_boundary_shift(&model, &dist, 0.0, 0.005, 1).unwrap(), 0.0);
        let s = calibrate_boundary_shift(&model, &dist, 0.1, 0.005, 1).unwrap();
        assert!((s + 0.1).abs() < 0.005 + 0.005, "{s}");
        assert!(matches!(calibrate_boundary_shift(&model, &dist, 0.6, 0.005, 1), Err(Error::Calibration(_))));
    }

    #[test]
    fn incompatible_pairs_rejected() {
        let q = beta_queries(10, 1);
        let model = make_poly_scenario_target();
        for spec in [DefenseSpec::LabelFlip, DefenseSpec::Mvp { rho: 1.0 }, DefenseSpec::MisleadingShift { delta: 1.0 }]
        {
            assert!(defend(&spec, &model, &q, budget(0.1), 0).unwrap_err().is_config());
        }
    }
}
