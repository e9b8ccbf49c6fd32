//! Shared vocabulary of the attacker/defender game: queries, responses,
//! target models, losses, budgets and fitted models.

use crate::attackers::knn_neighbors;
use crate::error::{Error, Result};

/// Tolerance used when checking that probability rows sum to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// An `n x d` batch of queries, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    points: Vec<f64>,
    n: usize,
    d: usize,
}

impl QuerySet {
    pub fn new(points: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::config("query set needs n >= 1 and d >= 1"));
        }
        if points.len() != n * d {
            return Err(Error::LengthMismatch { left: points.len(), right: n * d });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("query set contains non-finite entries"));
        }
        Ok(Self { points, n, d })
    }

    /// Univariate queries.
    pub fn from_scalars(xs: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        Self::new(xs, n, 1)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::config("ragged query rows"));
        }
        Self::new(rows.concat(), n, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    /// Values of one coordinate across all queries.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    /// Copy of the queries as a column-major matrix.
    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.d, &self.points)
    }
}

/// Responses returned to the querying party.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseVector {
    Regression(Vec<f64>),
    Labels(Vec<u8>),
    /// Row-major `n x classes` matrix of probability vectors.
    Probabilities {
        classes: usize,
        values: Vec<f64>,
    },
}

impl ResponseVector {
    pub fn probabilities(classes: usize, values: Vec<f64>) -> Result<Self> {
        if classes < 2 || !values.len().is_multiple_of(classes) {
            return Err(Error::config("probability matrix shape is invalid"));
        }
        for row in values.chunks_exact(classes) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::config("probability row is not in the simplex"));
            }
        }
        Ok(ResponseVector::Probabilities { classes, values })
    }

    pub fn len(&self) -> usize {
        match self {
            ResponseVector::Regression(v) => v.len(),
            ResponseVector::Labels(v) => v.len(),
            ResponseVector::Probabilities { classes, values } => values.len() / classes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_regression(&self) -> Result<&[f64]> {
        match self {
            ResponseVector::Regression(v) => Ok(v),
            _ => Err(Error::config("expected regression responses")),
        }
    }

    pub fn as_labels(&self) -> Result<&[u8]> {
        match self {
            ResponseVector::Labels(v) => Ok(v),
            _ => Err(Error::config("expected hard-label responses")),
        }
    }

    pub fn prob_row(&self, i: usize) -> Option<&[f64]> {
        match self {
            ResponseVector::Probabilities { classes, values } => Some(&values[i * classes..(i + 1) * classes]),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ResponseVector::Regression(_) => "regression",
            ResponseVector::Labels(_) => "labels",
            ResponseVector::Probabilities { .. } => "probabilities",
        }
    }
}

/// Polynomial `x -> sum_j coefficients[j] * x^j` with a nonzero leading term.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialModel {
    coefficients: Vec<f64>,
}

impl PolynomialModel {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Softmax of `classes` affine score functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbClassifierModel {
    /// Row-major `classes x d`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    d: usize,
}

impl ProbClassifierModel {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights.chunks_exact(self.d).zip(&self.bias).map(|(w, b)| dot(w, x) + b).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }
}

/// The defender's function f*.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel {
    Polynomial(PolynomialModel),
    Linear { beta: Vec<f64> },
    LinearClassifier { beta: Vec<f64> },
    ProbClassifier(ProbClassifierModel),
}

impl TargetModel {
    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        match coefficients.last() {
            None => Err(Error::config("polynomial needs at least one coefficient")),
            Some(&lead) if lead == 0.0 && coefficients.len() > 1 => {
                Err(Error::config("polynomial leading coefficient must be nonzero"))
            }
            Some(_) if coefficients.iter().any(|c| !c.is_finite()) => {
                Err(Error::config("polynomial coefficients must be finite"))
            }
            Some(_) => Ok(TargetModel::Polynomial(PolynomialModel { coefficients })),
        }
    }

    pub fn linear(beta: Vec<f64>) -> Result<Self> {
        check_vector(&beta, "linear coefficients")?;
        Ok(TargetModel::Linear { beta })
    }

    pub fn linear_classifier(beta: Vec<f64>) -> Result<Self> {
        check_vector(&beta, "classifier coefficients")?;
        Ok(TargetModel::LinearClassifier { beta })
    }

    pub fn prob_classifier(weights: Vec<f64>, bias: Vec<f64>, d: usize) -> Result<Self> {
        let classes = bias.len();
        if classes < 2 || d == 0 || weights.len() != classes * d {
            return Err(Error::config("probability classifier shape is invalid"));
        }
        check_vector(&weights, "classifier weights")?;
        check_vector(&bias, "classifier bias")?;
        Ok(TargetModel::ProbClassifier(ProbClassifierModel { weights, bias, d }))
    }

    /// Input dimension the model expects.
    pub fn input_dim(&self) -> usize {
        match self {
            TargetModel::Polynomial(_) => 1,
            TargetModel::Linear { beta } | TargetModel::LinearClassifier { beta } => beta.len(),
            TargetModel::ProbClassifier(m) => m.d,
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, TargetModel::Polynomial(_) | TargetModel::Linear { .. })
    }

    /// The loss that compares this model's outputs.
    pub fn natural_loss(&self) -> LossFunction {
        match self {
            TargetModel::Polynomial(_) | TargetModel::Linear { .. } => LossFunction::SquaredError,
            TargetModel::LinearClassifier { .. } => LossFunction::ZeroOne,
            TargetModel::ProbClassifier(_) => LossFunction::ProbabilitySquaredError,
        }
    }

    /// Regression value at a single point; `None` for classifiers.
    pub fn regression_value(&self, x: &[f64]) -> Option<f64> {
        match self {
            TargetModel::Polynomial(p) => Some(p.eval(x[0])),
            TargetModel::Linear { beta } => Some(dot(beta, x)),
            _ => None,
        }
    }
}

fn check_vector(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(format!("{what} must be nonempty and finite")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Computes f*(X_i) for every query.
pub fn evaluate_target(model: &TargetModel, queries: &QuerySet) -> Result<ResponseVector> {
    if queries.d() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), found: queries.d() });
    }
    Ok(match model {
        TargetModel::Polynomial(p) => ResponseVector::Regression(queries.rows().map(|r| p.eval(r[0])).collect()),
        TargetModel::Linear { beta } => ResponseVector::Regression(queries.rows().map(|r| dot(beta, r)).collect()),
        TargetModel::LinearClassifier { beta } => {
            ResponseVector::Labels(queries.rows().map(|r| u8::from(dot(beta, r) >= 0.0)).collect())
        }
        TargetModel::ProbClassifier(m) => ResponseVector::Probabilities {
            classes: m.classes(),
            values: queries.rows().flat_map(|r| m.eval(r)).collect(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFunction {
    SquaredError,
    ZeroOne,
    /// Sum over coordinates of squared differences between probability rows.
    ProbabilitySquaredError,
}

/// Mean per-query loss between clean and perturbed responses.
pub fn empirical_utility_loss(clean: &ResponseVector, perturbed: &ResponseVector, loss: LossFunction) -> Result<f64> {
    if clean.len() != perturbed.len() {
        return Err(Error::LengthMismatch { left: clean.len(), right: perturbed.len() });
    }
    let n = clean.len();
    if n == 0 {
        return Err(Error::config("empty response vectors"));
    }
    let total = match (clean, perturbed, loss) {
        (ResponseVector::Regression(a), ResponseVector::Regression(b), LossFunction::SquaredError) => {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        }
        (ResponseVector::Labels(a), ResponseVector::Labels(b), LossFunction::ZeroOne) => {
            a.iter().zip(b).filter(|(x, y)| x != y).count() as f64
        }
        (
            ResponseVector::Probabilities { classes: ka, values: a },
            ResponseVector::Probabilities { classes: kb, values: b },
            LossFunction::ProbabilitySquaredError,
        ) if ka == kb => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>(),
        _ => {
            return Err(Error::config(format!(
                "loss {loss:?} is incompatible with {} vs {} responses",
                clean.kind(),
                perturbed.kind()
            )))
        }
    };
    Ok(total / n as f64)
}

/// Per-query utility-loss budget U_n, in units of the utility loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityBudget(f64);

impl UtilityBudget {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::config(format!("utility budget must be >= 0, got {value}")));
        }
        Ok(Self(value))
    }

    /// Budget for zero-one losses, restricted to [0, 1].
    pub fn zero_one(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::config(format!("zero-one budget must lie in [0, 1], got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Euclidean norm of a deterministic perturbation that spends the whole
    /// budget on `n` queries: `sqrt(n * U_n)`.
    pub fn perturbation_norm(self, n: usize) -> f64 {
        (n as f64 * self.0).sqrt()
    }
}

/// The attacker's rebuilt predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Polynomial { coefficients: Vec<f64> },
    Linear { intercept: f64, coefficients: Vec<f64> },
    Knn { train: QuerySet, responses: ResponseVector, k: usize },
    Halfspace { weights: Vec<f64>, bias: f64 },
}

/// Bookkeeping about how a fit was chosen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitMetadata {
    pub selected_order: Option<usize>,
    /// Information-criterion score for each candidate order (`None` if skipped).
    pub order_scores: Vec<Option<f64>>,
    pub selected_variables: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub predictor: Predictor,
    pub metadata: FitMetadata,
}

impl FittedModel {
    pub fn new(predictor: Predictor, metadata: FitMetadata) -> Self {
        Self { predictor, metadata }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match &self.predictor {
            Predictor::Polynomial { .. } => Some(1),
            Predictor::Linear { coefficients, .. } => Some(coefficients.len()),
            Predictor::Knn { train, .. } => Some(train.d()),
            Predictor::Halfspace { weights, .. } => Some(weights.len()),
        }
    }

    pub fn predict(&self, queries: &QuerySet) -> Result<ResponseVector> {
        if let Some(d) = self.input_dim() {
            if d != queries.d() {
                return Err(Error::DimensionMismatch { expected: d, found: queries.d() });
            }
        }
        Ok(match &self.predictor {
            Predictor::Polynomial { coefficients } => ResponseVector::Regression(
                queries.rows().map(|r| coefficients.iter().rev().fold(0.0, |acc, c| acc * r[0] + c)).collect(),
            ),
            Predictor::Linear { intercept, coefficients } => {
                ResponseVector::Regression(queries.rows().map(|r| intercept + dot(coefficients, r)).collect())
            }
            Predictor::Halfspace { weights, bias } => {
                ResponseVector::Labels(queries.rows().map(|r| u8::from(dot(weights, r) + bias >= 0.0)).collect())
            }
            Predictor::Knn { train, responses, k } => {
                let neighbors: Vec<Vec<usize>> = queries.rows().map(|r| knn_neighbors(train, r, *k)).collect();
                average_neighbors(responses, &neighbors)
            }
        })
    }
}

fn average_neighbors(responses: &ResponseVector, neighbors: &[Vec<usize>]) -> ResponseVector {
    match responses {
        ResponseVector::Regression(y) => ResponseVector::Regression(
            neighbors.iter().map(|idx| idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64).collect(),
        ),
        ResponseVector::Labels(y) => ResponseVector::Labels(
            neighbors
                .iter()
                .map(|idx| {
                    let ones = idx.iter().filter(|&&i| y[i] == 1).count();
                    u8::from(2 * ones >= idx.len())
                })
                .collect(),
        ),
        ResponseVector::Probabilities { classes, values } => {
            let k = *classes;
            let mut out = Vec::with_capacity(neighbors.len() * k);
            for idx in neighbors {
                let mut acc = vec![0.0; k];
                for &i in idx {
                    for (a, v) in acc.iter_mut().zip(&values[i * k..(i + 1) * k]) {
                        *a += v;
                    }
                }
                out.extend(acc.into_iter().map(|a| a / idx.len() as f64));
            }
            ResponseVector::Probabilities { classes: k, values: out }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> TargetModel {
        TargetModel::polynomial(vec![1.0, -4.0, 4.0]).unwrap()
    }

    #[test]
    fn quadratic_root_and_intercept() {
        let q = QuerySet::from_scalars(vec![0.5, 0.0]).unwrap();
        let y = evaluate_target(&quadratic(), &q).unwrap();
        assert_eq!(y, ResponseVector::Regression(vec![0.0, 1.0]));
    }

    #[test]
    fn linear_dot_product() {
        let mut beta = vec![3.0; 15];
        beta.extend(vec![0.0; 25]);
        let model = TargetModel::linear(beta).unwrap();
        let q = QuerySet::new(vec![1.0; 40], 1, 40).unwrap();
        let y = evaluate_target(&model, &q).unwrap();
        assert_eq!(y.as_regression().unwrap(), &[45.0]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let q = QuerySet::new(vec![1.0, 2.0], 1, 2).unwrap();
        let err = evaluate_target(&quadratic(), &q).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn zero_leading_coefficient_rejected() {
        assert!(TargetModel::polynomial(vec![1.0, 0.0]).is_err());
        assert!(TargetModel::polynomial(vec![0.0]).is_ok());
    }

    #[test]
    fn utility_loss_cases() {
        let clean = ResponseVector::Regression(vec![0.0, 1.0, 2.0, -1.0]);
        assert_eq!(empirical_utility_loss(&clean, &clean, LossFunction::SquaredError).unwrap(), 0.0);

        let shifted = ResponseVector::Regression(vec![0.5, 1.5, 2.5, -0.5]);
        let u = empirical_utility_loss(&clean, &shifted, LossFunction::SquaredError).unwrap();
        assert!((u - 0.25).abs() < 1e-15);

        let labels = ResponseVector::Labels(vec![0, 1, 0, 1, 1, 0, 0, 1, 1, 0]);
        let mut flipped = labels.as_labels().unwrap().to_vec();
        for i in [0, 4, 7] {
            flipped[i] = 1 - flipped[i];
        }
        let u = empirical_utility_loss(&labels, &ResponseVector::Labels(flipped), LossFunction::ZeroOne).unwrap();
        assert!((u - 0.3).abs() < 1e-15);
    }

    #[test]
    fn utility_loss_rejects_mismatch() {
        let a = ResponseVector::Regression(vec![0.0, 1.0]);
        let b = ResponseVector::Regression(vec![0.0]);
        assert!(matches!(
            empirical_utility_loss(&a, &b, LossFunction::SquaredError),
            Err(Error::LengthMismatch { .. })
        ));
        let labels = ResponseVector::Labels(vec![0, 1]);
        assert!(empirical_utility_loss(&a, &labels, LossFunction::SquaredError).is_err());
    }

    #[test]
    fn prob_classifier_rows_are_stochastic() {
        let model = TargetModel::prob_classifier(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0], vec![0.1, 0.0, -0.3], 2).unwrap();
        let q = QuerySet::from_rows(&[vec![0.2, 0.9], vec![-4.0, 10.0]]).unwrap();
        let y = evaluate_target(&model, &q).unwrap();
        for i in 0..2 {
            let row = y.prob_row(i).unwrap();
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_validation() {
        assert!(UtilityBudget::new(-0.1).is_err());
        assert!(UtilityBudget::zero_one(1.5).is_err());
        assert_eq!(UtilityBudget::new(0.25).unwrap().perturbation_norm(4), 1.0);
    }
}
