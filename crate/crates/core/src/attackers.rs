//! Attack learning algorithms: map query/response pairs to a fitted model.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{dot, FitMetadata, FittedModel, Predictor, QuerySet, ResponseVector};
use crate::numerics::{
    default_lambda1_grid, kfold_cv_enet, polynomial_features, DesignMatrix, EnetOptions, Lambda2Grid, LeastSquares,
    PenaltyGrid,
};

/// Lower clip for the residual-variance estimate.
pub const SIGMA2_FLOOR: f64 = 1e-8;
/// Upper bound `B` on the residual-variance estimate.
pub const SIGMA2_BOUND: f64 = 100.0;

/// Largest polynomial order `q_n` the attacker considers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MaxOrderRule {
    /// `ceil(n^(1/3))`.
    #[default]
    CubeRoot,
    Fixed(usize),
}

impl MaxOrderRule {
    pub fn max_order(&self, n: usize) -> usize {
        match *self {
            MaxOrderRule::CubeRoot => {
                let r = (n as f64).cbrt();
                let rounded = r.round();
                if (r - rounded).abs() < 1e-9 {
                    rounded as usize
                } else {
                    r.ceil() as usize
                }
            }
            MaxOrderRule::Fixed(q) => q,
        }
    }
}

/// Complexity weight `lambda_n` of the information criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InformationCriterion {
    Aic,
    Bic,
    Custom(f64),
}

impl InformationCriterion {
    pub fn weight(&self, n: usize) -> f64 {
        match *self {
            InformationCriterion::Aic => 2.0,
            InformationCriterion::Bic => (n as f64).ln(),
            InformationCriterion::Custom(l) => l,
        }
    }
}

/// Residual-variance estimate used in the criterion penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceRule {
    /// `RSS_{q_n} / (n - q_n - 1)` from the largest model, shared by all orders.
    #[default]
    LargestModel,
    /// `RSS_q / (n - q - 1)` for each order.
    PerModel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KChoice {
    Fixed(usize),
    /// Oracle choice over a grid using clean validation responses; `None`
    /// means [`default_k_grid`].
    BestOverGrid(Option<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSpec {
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    pub folds: usize,
    /// `l2 = r * l1` ratios; `[0]` is the lasso.
    pub l2_ratios: Vec<f64>,
}

impl PenalizedSpec {
    pub fn lasso() -> Self {
        Self { n_lambda: 50, lambda_ratio: 1e-3, folds: 5, l2_ratios: vec![0.0] }
    }

    pub fn elastic_net() -> Self {
        Self { l2_ratios: vec![0.0, 0.5], ..Self::lasso() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErmOptions {
    pub fit_intercept: bool,
    pub max_iter: usize,
    /// Random direction perturbations tried during 0-1 refinement.
    pub refinement_candidates: usize,
}

impl Default for ErmOptions {
    fn default() -> Self {
        Self { fit_intercept: true, max_iter: 2000, refinement_candidates: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    Knn { k: KChoice },
    PolyGic { max_order: MaxOrderRule, criterion: InformationCriterion, variance: VarianceRule },
    Lasso(PenalizedSpec),
    ElasticNet(PenalizedSpec),
    LinearClassErm(ErmOptions),
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Knn { .. } => "knn",
            AttackSpec::PolyGic { .. } => "poly_gic",
            AttackSpec::Lasso(_) => "lasso",
            AttackSpec::ElasticNet(_) => "elastic_net",
            AttackSpec::LinearClassErm(_) => "linear_erm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttackSpec::Knn { k: KChoice::Fixed(0) } => Err(Error::config("k must be >= 1")),
            AttackSpec::Knn { k: KChoice::BestOverGrid(Some(g)) } if g.is_empty() || g.contains(&0) => {
                Err(Error::config("k grid must be nonempty with entries >= 1"))
            }
            AttackSpec::PolyGic { criterion: InformationCriterion::Custom(l), .. } if !(*l >= 0.0) => {
                Err(Error::config("criterion weight must be >= 0"))
            }
            AttackSpec::Lasso(p) | AttackSpec::ElasticNet(p)
                if p.n_lambda == 0 || p.folds < 2 || p.l2_ratios.is_empty() || !(p.lambda_ratio > 0.0) =>
            {
                Err(Error::config("penalized attack needs a nonempty grid and folds >= 2"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the attack needs clean validation data.
    pub fn needs_validation(&self) -> bool {
        matches!(self, AttackSpec::Knn { k: KChoice::BestOverGrid(_) })
    }
}

/// Extra inputs some attacks use.
#[derive(Debug, Clone, Default)]
pub struct AttackContext {
    pub seed: u64,
    /// Clean held-out data for oracle hyper-parameter choice.
    pub validation: Option<(QuerySet, ResponseVector)>,
}

pub fn attack(
    spec: &AttackSpec,
    queries: &QuerySet,
    responses: &ResponseVector,
    ctx: &AttackContext,
) -> Result<FittedModel> {
    spec.validate()?;
    match spec {
        AttackSpec::Knn { k: KChoice::Fixed(k) } => knn_fit(queries, responses, *k),
        AttackSpec::Knn { k: KChoice::BestOverGrid(grid) } => {
            let (vq, vy) =
                ctx.validation.as_ref().ok_or_else(|| Error::config("best-k k-NN needs a validation set"))?;
            let grid = grid.clone().unwrap_or_else(|| default_k_grid(queries.n()));
            knn_best_over_grid(queries, responses, &grid, vq, vy)
        }
        AttackSpec::PolyGic { max_order, criterion, variance } => {
            let q = max_order.max_order(queries.n());
            poly_gic_fit(queries, responses.as_regression()?, q, criterion.weight(queries.n()), *variance)
        }
        AttackSpec::Lasso(p) | AttackSpec::ElasticNet(p) => {
            penalized_fit(queries, responses.as_regression()?, p, ctx.seed)
        }
        AttackSpec::LinearClassErm(opts) => linear_class_erm_fit(queries, responses.as_labels()?, *opts, ctx.seed),
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` training queries nearest to `x`, nearest first;
/// distance ties go to the smaller index.
pub fn knn_neighbors(train: &QuerySet, x: &[f64], k: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = train.rows().enumerate().map(|(i, r)| (squared_distance(r, x), i)).collect();
    let k = k.min(pairs.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < pairs.len() && k > 0 {
        pairs.select_nth_unstable_by(k - 1, cmp);
        pairs.truncate(k);
    }
    pairs.sort_unstable_by(cmp);
    pairs.into_iter().take(k).map(|(_, i)| i).collect()
}

fn check_responses(queries: &QuerySet, responses: &ResponseVector) -> Result<()> {
    if responses.len() != queries.n() {
        return Err(Error::LengthMismatch { left: queries.n(), right: responses.len() });
    }
    Ok(())
}

/// k-NN regression: average of the `k` nearest responses.
pub fn knn_fit(queries: &QuerySet, responses: &ResponseVector, k: usize) -> Result<FittedModel> {
    check_responses(queries, responses)?;
    if k == 0 || k > queries.n() {
        return Err(Error::config(format!("need 1 <= k <= n, got k={k}, n={}", queries.n())));
    }
    let metadata = FitMetadata { k: Some(k), converged: true, ..Default::default() };
    Ok(FittedModel::new(Predictor::Knn { train: queries.clone(), responses: responses.clone(), k }, metadata))
}

/// `1..=20` followed by a geometric ladder up to `n`.
pub fn default_k_grid(n: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (1..=n.min(20)).collect();
    let mut k = 20.0f64;
    while (k as usize) < n {
        k *= 1.5;
        grid.push((k.round() as usize).min(n));
    }
    grid.dedup();
    grid
}

/// Picks the `k` with the smallest validation loss against clean responses;
/// ties go to the smaller `k`.
pub fn knn_best_over_grid(
    queries: &QuerySet,
    responses: &ResponseVector,
    grid: &[usize],
    validation: &QuerySet,
    truth: &ResponseVector,
) -> Result<FittedModel> {
    check_responses(queries, responses)?;
    check_responses(validation, truth)?;
    let n = queries.n();
    let grid: Vec<usize> = grid.iter().copied().filter(|&k| k >= 1 && k <= n).collect();
    if grid.is_empty() {
        return Err(Error::config("k grid has no admissible values"));
    }
    let k_max = *grid.iter().max().expect("nonempty");
    let width = match responses {
        ResponseVector::Regression(_) => 1,
        ResponseVector::Probabilities { classes, .. } => *classes,
        ResponseVector::Labels(_) => return Err(Error::config("best-k k-NN needs real-valued responses")),
    };
    let value = |r: &ResponseVector, i: usize, c: usize| match r {
        ResponseVector::Regression(v) => v[i],
        ResponseVector::Probabilities { values, .. } => values[i * width + c],
        ResponseVector::Labels(_) => unreachable!(),
    };
    let mut loss = vec![0.0; grid.len()];
    let mut prefix = vec![0.0; width];
    for (j, x) in validation.rows().enumerate() {
        let neighbors = knn_neighbors(queries, x, k_max);
        prefix.iter_mut().for_each(|p| *p = 0.0);
        let mut g = 0;
        let mut sorted_grid: Vec<(usize, usize)> = grid.iter().copied().enumerate().map(|(a, b)| (b, a)).collect();
        sorted_grid.sort_unstable();
        for (count, &i) in neighbors.iter().enumerate() {
            for (c, p) in prefix.iter_mut().enumerate() {
                *p += value(responses, i, c);
            }
            while g < sorted_grid.len() && sorted_grid[g].0 == count + 1 {
                let slot = sorted_grid[g].1;
                loss[slot] += prefix
                    .iter()
                    .enumerate()
                    .map(|(c, p)| (p / (count + 1) as f64 - value(truth, j, c)).powi(2))
                    .sum::<f64>();
                g += 1;
            }
        }
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if loss[i] < loss[best] || (loss[i] == loss[best] && grid[i] < grid[best]) {
            best = i;
        }
    }
    knn_fit(queries, responses, grid[best])
}

/// Polynomial regression with order chosen by the generalized information
/// criterion `RSS_q/n + lambda * sigma2 * q / n`; ties go to the smaller order.
pub fn poly_gic_fit(
    queries: &QuerySet,
    responses: &[f64],
    max_order: usize,
    lambda: f64,
    variance: VarianceRule,
) -> Result<FittedModel> {
    if queries.d() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: queries.d() });
    }
    let n = queries.n();
    if responses.len() != n {
        return Err(Error::LengthMismatch { left: n, right: responses.len() });
    }
    if max_order + 1 > n {
        return Err(Error::config(format!("max order {max_order} needs at least {} queries", max_order + 1)));
    }
    let xs = queries.column(0);
    let mut fits: Vec<Option<(Vec<f64>, f64)>> = Vec::with_capacity(max_order + 1);
    for q in 0..=max_order {
        match LeastSquares::new(&polynomial_features(&xs, q)) {
            Ok(ls) => {
                let coef = ls.coefficients(responses);
                let rss: f64 = xs
                    .iter()
                    .zip(responses)
                    .map(|(&x, &y)| {
                        let f = coef.iter().rev().fold(0.0, |acc, c| acc * x + c);
                        (y - f) * (y - f)
                    })
                    .sum();
                fits.push(Some((coef, rss)));
            }
            Err(err) => {
                warn!("polynomial order {q} skipped: {err}");
                fits.push(None);
            }
        }
    }
    let nf = n as f64;
    let residual_variance = |q: usize, rss: f64| {
        let dof = (n - q - 1).max(1) as f64;
        (rss / dof).clamp(SIGMA2_FLOOR, SIGMA2_BOUND)
    };
    let shared = fits
        .iter()
        .enumerate()
        .rev()
        .find_map(|(q, f)| f.as_ref().map(|(_, rss)| residual_variance(q, *rss)))
        .ok_or_else(|| Error::Fit("every candidate polynomial order was singular".into()))?;

    let scores: Vec<Option<f64>> = fits
        .iter()
        .enumerate()
        .map(|(q, f)| {
            f.as_ref().map(|(_, rss)| {
                let sigma2 = match variance {
                    VarianceRule::LargestModel => shared,
                    VarianceRule::PerModel => residual_variance(q, *rss),
                };
                rss / nf + lambda * sigma2 * q as f64 / nf
            })
        })
        .collect();
    let (best_q, _) = scores
        .iter()
        .enumerate()
        .filter_map(|(q, s)| s.map(|s| (q, s)))
        .fold(None, |acc: Option<(usize, f64)>, (q, s)| match acc {
            Some((_, bs)) if bs <= s => acc,
            _ => Some((q, s)),
        })
        .expect("at least one order was fit");
    let (coefficients, _) = fits[best_q].take().expect("selected order was fit");
    let metadata =
        FitMetadata { selected_order: Some(best_q), order_scores: scores, converged: true, ..Default::default() };
    Ok(FittedModel::new(Predictor::Polynomial { coefficients }, metadata))
}

/// Cross-validated lasso / elastic net with standardized columns and an
/// intercept. The selected set is exactly the nonzero coefficients.
pub fn penalized_fit(queries: &QuerySet, responses: &[f64], spec: &PenalizedSpec, seed: u64) -> Result<FittedModel> {
    let n = queries.n();
    if responses.len() != n {
        return Err(Error::LengthMismatch { left: n, right: responses.len() });
    }
    if n < spec.folds {
        return Err(Error::config(format!("need n >= folds, got n={n}, folds={}", spec.folds)));
    }
    let design = DesignMatrix::new(queries.to_matrix())?;
    let opts = EnetOptions::default();
    let grid = PenaltyGrid {
        lambda1: default_lambda1_grid(&design, responses, spec.n_lambda, spec.lambda_ratio, opts),
        lambda2: Lambda2Grid::RelativeToLambda1(spec.l2_ratios.clone()),
    };
    let cv = kfold_cv_enet(&design, responses, &grid, spec.folds, seed, opts)?;
    let support = cv.fit.support();
    let metadata = FitMetadata {
        selected_variables: Some(support),
        lambda1: Some(cv.lambda1),
        lambda2: Some(cv.lambda2),
        converged: true,
        ..Default::default()
    };
    Ok(FittedModel::new(Predictor::Linear { intercept: cv.fit.intercept, coefficients: cv.fit.coefficients }, metadata))
}

pub fn lasso_fit(queries: &QuerySet, responses: &[f64], spec: &PenalizedSpec, seed: u64) -> Result<FittedModel> {
    penalized_fit(queries, responses, spec, seed)
}

fn training_errors(scores: &[f64], bias: f64, labels: &[u8]) -> usize {
    scores.iter().zip(labels).filter(|(s, &l)| u8::from(**s + bias >= 0.0) != l).count()
}

/// Bias minimizing training 0-1 error for fixed scores, and that error.
fn best_threshold(scores: &[f64], labels: &[u8]) -> (f64, usize) {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Cut at position j: ranks < j predicted 0, ranks >= j predicted 1.
    let total_zeros = labels.iter().filter(|&&l| l == 0).count();
    let mut errors = total_zeros;
    let mut best = (errors, 0usize);
    for j in 1..=n {
        let i = order[j - 1];
        if labels[i] == 1 {
            errors += 1;
        } else {
            errors -= 1;
        }
        let distinct = j == n || scores[order[j]] > scores[i];
        if distinct && errors < best.0 {
            best = (errors, j);
        }
    }
    let (err, j) = best;
    let bias = if j == 0 {
        -scores[order[0]] + 1.0
    } else if j == n {
        -scores[order[n - 1]] - 1.0
    } else {
        -0.5 * (scores[order[j - 1]] + scores[order[j]])
    };
    (bias, err)
}

/// Halfspace classifier `1{x^T w + b >= 0}`: logistic regression by gradient
/// descent, then a seeded local search on the training 0-1 loss.
pub fn linear_class_erm_fit(queries: &QuerySet, labels: &[u8], opts: ErmOptions, seed: u64) -> Result<FittedModel> {
    let (n, d) = (queries.n(), queries.d());
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::config("labels must be 0 or 1"));
    }
    let nf = n as f64;
    // Standardize for a well-conditioned gradient descent.
    let means: Vec<f64> =
        (0..d).map(|j| if opts.fit_intercept { queries.rows().map(|r| r[j]).sum::<f64>() / nf } else { 0.0 }).collect();
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            let ms = queries.rows().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / nf;
            if ms > 0.0 {
                ms.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> =
        queries.rows().map(|r| r.iter().enumerate().map(|(j, v)| (v - means[j]) / scales[j]).collect()).collect();
    let dim = if opts.fit_intercept { d + 1 } else { d };
    let feature = |i: usize, j: usize| if j < d { z[i][j] } else { 1.0 };
    let lipschitz = (0..n).map(|i| (0..dim).map(|j| feature(i, j).powi(2)).sum::<f64>()).sum::<f64>() / (4.0 * nf);
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };

    let mut theta = vec![0.0; dim];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut grad = vec![0.0; dim];
        for i in 0..n {
            let s: f64 = (0..dim).map(|j| theta[j] * feature(i, j)).sum();
            let p = 1.0 / (1.0 + (-s).exp());
            let r = p - f64::from(labels[i]);
            for (j, g) in grad.iter_mut().enumerate() {
                *g += r * feature(i, j) / nf;
            }
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-6 {
            converged = true;
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
    }

    // Back to the original scale.
    let mut weights: Vec<f64> = (0..d).map(|j| theta[j] / scales[j]).collect();
    let mut bias = if opts.fit_intercept { theta[d] - dot(&weights, &means) } else { 0.0 };
    let scores_for = |w: &[f64]| -> Vec<f64> { queries.rows().map(|r| dot(w, r)).collect() };

    let mut scores = scores_for(&weights);
    let mut best_err = training_errors(&scores, bias, labels);
    if opts.fit_intercept {
        let (b, e) = best_threshold(&scores, labels);
        if e < best_err {
            bias = b;
            best_err = e;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cand = opts.refinement_candidates;
    for round in 0..cand {
        if best_err == 0 {
            break;
        }
        let wn = dot(&weights, &weights).sqrt().max(1e-12);
        let spread = 0.5 * (0.01f64 / 0.5).powf(round as f64 / cand.max(1) as f64);
        let trial: Vec<f64> = weights.iter().map(|w| w + spread * wn * rng.sample::<f64, _>(StandardNormal)).collect();
        scores = scores_for(&trial);
        let (b, e) = if opts.fit_intercept {
            best_threshold(&scores, labels)
        } else {
            (0.0, training_errors(&scores, 0.0, labels))
        };
        if e < best_err {
            weights = trial;
            bias = b;
            best_err = e;
        }
    }

    let mut metadata = FitMetadata { converged, ..Default::default() };
    if !converged {
        metadata.warnings.push(format!("logistic gradient descent stopped after {} iterations", opts.max_iter));
    }
    Ok(FittedModel::new(Predictor::Halfspace { weights, bias }, metadata))
}
