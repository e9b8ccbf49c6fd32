//! Query distributions and the target models used by the built-in scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{QuerySet, TargetModel};

/// Dimension of the grouped high-dimensional design.
pub const HIGHDIM_D: usize = 40;
/// Queries per replicate in the grouped high-dimensional design.
pub const HIGHDIM_N: usize = 50;
/// Test points for the grouped high-dimensional design.
pub const HIGHDIM_N_TEST: usize = 400;
const HIGHDIM_GROUP: usize = 5;
const HIGHDIM_GROUPS: usize = 3;
const HIGHDIM_EPS_VAR: f64 = 0.01;
const HIGHDIM_COEF: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryDistribution {
    Beta {
        alpha: f64,
        beta: f64,
    },
    UniformCube {
        d: usize,
    },
    StandardNormal {
        d: usize,
    },
    /// Three latent-factor groups of five columns, then independent columns.
    HighDimGrouped,
}

impl QueryDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            QueryDistribution::Beta { alpha, beta } if !(alpha > 0.0 && beta > 0.0) => {
                Err(Error::config("beta shape parameters must be positive"))
            }
            QueryDistribution::UniformCube { d } | QueryDistribution::StandardNormal { d } if d == 0 => {
                Err(Error::config("query dimension must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            QueryDistribution::Beta { .. } => 1,
            QueryDistribution::UniformCube { d } | QueryDistribution::StandardNormal { d } => d,
            QueryDistribution::HighDimGrouped => HIGHDIM_D,
        }
    }
}

/// IID queries from `dist`.
pub fn sample_queries(dist: &QueryDistribution, n: usize, seed: u64) -> Result<QuerySet> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::config("need at least one query"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dist.dim();
    let points: Vec<f64> = match *dist {
        QueryDistribution::Beta { alpha, beta } => {
            let law = Beta::new(alpha, beta).map_err(|e| Error::config(e.to_string()))?;
            (0..n).map(|_| rng.sample(law)).collect()
        }
        QueryDistribution::UniformCube { d } => (0..n * d).map(|_| rng.random::<f64>()).collect(),
        QueryDistribution::StandardNormal { d } => (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
        QueryDistribution::HighDimGrouped => {
            let eps = Normal::new(0.0, HIGHDIM_EPS_VAR.sqrt()).expect("valid sd");
            let mut pts = Vec::with_capacity(n * HIGHDIM_D);
            for _ in 0..n {
                for _ in 0..HIGHDIM_GROUPS {
                    let z: f64 = rng.sample(StandardNormal);
                    for _ in 0..HIGHDIM_GROUP {
                        pts.push(z + rng.sample(eps));
                    }
                }
                for _ in HIGHDIM_GROUPS * HIGHDIM_GROUP..HIGHDIM_D {
                    pts.push(rng.sample(StandardNormal));
                }
            }
            pts
        }
    };
    QuerySet::new(points, n, d)
}

/// Sparse coefficients: 3 on the fifteen grouped columns, 0 elsewhere.
pub fn highdim_example1_target() -> TargetModel {
    let beta: Vec<f64> =
        (0..HIGHDIM_D).map(|j| if j < HIGHDIM_GROUPS * HIGHDIM_GROUP { HIGHDIM_COEF } else { 0.0 }).collect();
    TargetModel::linear(beta).expect("finite coefficients")
}

/// Population variance of `f*(X)` for the grouped design: each group
/// contributes `(5*3)^2 + 5 * 3^2 * 0.01`.
pub fn highdim_example1_signal_variance() -> f64 {
    let g = HIGHDIM_GROUP as f64;
    HIGHDIM_GROUPS as f64 * ((g * HIGHDIM_COEF).powi(2) + g * HIGHDIM_COEF.powi(2) * HIGHDIM_EPS_VAR)
}

/// Training queries and target of the grouped sparse-regression example.
pub fn make_highdim_example1(seed: u64) -> (QuerySet, TargetModel) {
    let queries = sample_queries(&QueryDistribution::HighDimGrouped, HIGHDIM_N, seed).expect("fixed valid parameters");
    (queries, highdim_example1_target())
}

/// Fresh test points for the grouped example.
pub fn highdim_example1_test_set(seed: u64) -> QuerySet {
    sample_queries(&QueryDistribution::HighDimGrouped, HIGHDIM_N_TEST, seed).expect("fixed valid parameters")
}

/// `f*(x) = (2x - 1)^2`.
pub fn make_poly_scenario_target() -> TargetModel {
    TargetModel::polynomial(vec![1.0, -4.0, 4.0]).expect("nonzero leading coefficient")
}

/// Softmax over `classes` random affine scores with standard normal weights.
pub fn make_prob_classifier(d: usize, classes: usize, seed: u64) -> Result<TargetModel> {
    if classes < 2 {
        return Err(Error::config("need at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..classes * d).map(|_| rng.sample(StandardNormal)).collect();
    let bias: Vec<f64> = (0..classes).map(|_| rng.sample(StandardNormal)).collect();
    TargetModel::prob_classifier(weights, bias, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::evaluate_target;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn beta_mean() {
        let n = 100_000;
        let q = sample_queries(&QueryDistribution::Beta { alpha: 1.0, beta: 3.0 }, n, 4).unwrap();
        // Var of Beta(1,3) = 3 / (16 * 5).
        let se = (3.0 / 80.0 / n as f64).sqrt();
        assert!((mean(q.as_slice()) - 0.25).abs() < 3.0 * se);
    }

    #[test]
    fn uniform_support_and_determinism() {
        let dist = QueryDistribution::UniformCube { d: 3 };
        let q = sample_queries(&dist, 500, 1).unwrap();
        assert!(q.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(q, sample_queries(&dist, 500, 1).unwrap());
    }

    #[test]
    fn grouped_design_correlations() {
        let n = 10_000;
        let q = sample_queries(&QueryDistribution::HighDimGrouped, n, 7).unwrap();
        let c0 = q.column(0);
        let c1 = q.column(1);
        let c5 = q.column(5);
        let c19 = q.column(19);
        assert!((corr(&c0, &c1) - 1.0 / 1.01).abs() < 0.005);
        // SE of a null correlation is about 1/sqrt(n).
        assert!(corr(&c0, &c5).abs() < 3.0 / (n as f64).sqrt());
        let m = mean(&c19);
        let var = c19.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn highdim_example_shape() {
        let (q, model) = make_highdim_example1(3);
        assert_eq!((q.n(), q.d()), (50, 40));
        match model {
            TargetModel::Linear { beta } => {
                assert_eq!(beta.iter().filter(|&&b| b == 3.0).count(), 15);
                assert!(beta[15..].iter().all(|&b| b == 0.0));
            }
            _ => panic!("expected a linear target"),
        }
        assert_eq!(highdim_example1_test_set(1).n(), 400);
        assert!((highdim_example1_signal_variance() - 676.35).abs() < 1e-9);
    }

    #[test]
    fn poly_target_values() {
        let model = make_poly_scenario_target();
        let q = QuerySet::from_scalars(vec![0.5, 0.0, 1.0]).unwrap();
        assert_eq!(evaluate_target(&model, &q).unwrap().as_regression().unwrap(), &[0.0, 1.0, 1.0]);
        match model {
            TargetModel::Polynomial(p) => assert_eq!(p.order(), 2),
            _ => unreachable!(),
        }
    }

    #[test]
    fn poly_target_second_moment_under_beta13() {
        // Midpoint-rule quadrature of (2x-1)^4 * 3(1-x)^2 on [0, 1].
        let m = 200_000;
        let h = 1.0 / m as f64;
        let moment: f64 = (0..m)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                (2.0 * x - 1.0).powi(4) * 3.0 * (1.0 - x).powi(2) * h
            })
            .sum();
        assert!((moment - 0.2571).abs() < 1e-4, "{moment}");
        assert!((moment / 0.25 - 1.03).abs() < 0.01);
    }

    #[test]
    fn prob_classifier_reduces_to_logistic() {
        let model = make_prob_classifier(3, 2, 11).unwrap();
        assert_eq!(model, make_prob_classifier(3, 2, 11).unwrap());
        let TargetModel::ProbClassifier(m) = &model else { unreachable!() };
        let x = [0.3, -1.0, 2.0];
        let s = m.scores(&x);
        let p = m.eval(&x);
        let sigmoid = 1.0 / (1.0 + (-(s[0] - s[1])).exp());
        assert!((p[0] - sigmoid).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
