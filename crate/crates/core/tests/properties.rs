use model_privacy::defenses::{defend, misleading_shift, mvp, random_shuffle, DefenseSpec, Sign};
use model_privacy::eval::mean_and_se;
use model_privacy::harness::report::{read_csv, write_csv, ReplicateReport};
use model_privacy::model::{
    empirical_utility_loss, evaluate_target, LossFunction, QuerySet, TargetModel, UtilityBudget, SIMPLEX_TOL,
};
use model_privacy::noise::assign_noise_by_query_order;
use model_privacy::numerics::{project_onto_columns, DesignMatrix};
use model_privacy::seeds::{replicate_seed, Role};
use model_privacy::targets::{make_prob_classifier, sample_queries, QueryDistribution};
use proptest::prelude::*;

fn loss(model: &TargetModel, q: &QuerySet, spec: &DefenseSpec, budget: f64) -> f64 {
    let clean = evaluate_target(model, q).unwrap();
    let out = defend(spec, model, q, UtilityBudget::new(budget).unwrap(), 0).unwrap();
    empirical_utility_loss(&clean, &out, LossFunction::SquaredError).unwrap()
}

fn poly() -> impl Strategy<Value = TargetModel> {
    (prop::collection::vec(-3.0..3.0f64, 1..4), 0.5..3.0f64).prop_map(|(mut c, lead)| {
        c.push(lead);
        TargetModel::polynomial(c).unwrap()
    })
}

fn simplex_ok(values: &[f64], classes: usize) -> bool {
    values.chunks(classes).all(|row| {
        row.iter().all(|&p| (0.0..=1.0 + SIMPLEX_TOL).contains(&p))
            && (row.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constant_noise_spends_budget(model in poly(), n in 5usize..200, u in 1e-3..4.0f64, seed in any::<u64>(), minus in any::<bool>()) {
        let q = sample_queries(&QueryDistribution::Beta { alpha: 1.0, beta: 3.0 }, n, seed).unwrap();
        let sign = if minus { Sign::Minus } else { Sign::Plus };
        let got = loss(&model, &q, &DefenseSpec::ConstantNoising { sign }, u);
        prop_assert!((got - u).abs() <= 1e-9 * u);
    }

    #[test]
    fn order_disguise_spends_budget(model in poly(), n in 30usize..300, u in 1e-3..4.0f64, seed in any::<u64>()) {
        let q = sample_queries(&QueryDistribution::Beta { alpha: 1.0, beta: 3.0 }, n, seed).unwrap();
        let spec = DefenseSpec::OrderDisguise { order_rule: Default::default(), max_order: Default::default() };
        let got = loss(&model, &q, &spec, u);
        prop_assert!((got - u).abs() <= 1e-9 * u);
    }

    #[test]
    fn mvp_spends_budget(
        signal in prop::collection::vec(0.5..4.0f64, 1..5),
        zeros in 2usize..8,
        extra in 5usize..60,
        u in 1e-3..50.0f64,
        rho in 0.2..1.0f64,
        seed in any::<u64>(),
    ) {
        let mut beta = signal.clone();
        beta.extend(std::iter::repeat_n(0.0, zeros));
        let d = beta.len();
        let model = TargetModel::linear(beta).unwrap();
        let q = sample_queries(&QueryDistribution::StandardNormal { d }, d + extra, seed).unwrap();
        let clean = evaluate_target(&model, &q).unwrap();
        let out = mvp(&model, &q, UtilityBudget::new(u).unwrap(), rho, seed).unwrap();
        let got = empirical_utility_loss(&clean, &out, LossFunction::SquaredError).unwrap();
        prop_assert!((got - u).abs() <= 1e-9 * u);
    }

    #[test]
    fn probability_defenses_stay_on_simplex(classes in 2usize..5, d in 1usize..4, delta in 0.0..5.0f64, xi in 0.0..=1.0f64, seed in any::<u64>()) {
        let model = make_prob_classifier(d, classes, seed).unwrap();
        let q = sample_queries(&QueryDistribution::StandardNormal { d }, 40, seed ^ 1).unwrap();
        for out in [misleading_shift(&model, &q, delta).unwrap(), random_shuffle(&model, &q, xi, seed).unwrap()] {
            let model_privacy::model::ResponseVector::Probabilities { classes: k, values } = out else {
                panic!("probability output expected");
            };
            prop_assert_eq!(k, classes);
            prop_assert!(simplex_ok(&values, classes));
        }
    }

    #[test]
    fn projection_is_idempotent(n in 8usize..40, m in 1usize..6, seed in any::<u64>()) {
        prop_assume!(m < n);
        let q = sample_queries(&QueryDistribution::StandardNormal { d: m + 1 }, n, seed).unwrap();
        let x = DesignMatrix::new(q.to_matrix()).unwrap();
        let design = x.select_columns(&(0..m).collect::<Vec<_>>());
        let y = q.column(m);
        let p = project_onto_columns(&design, &y).unwrap();
        let pp = project_onto_columns(&design, &p).unwrap();
        let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn ordered_assignment_is_a_sorted_permutation(xs in prop::collection::vec(0.0..1.0f64, 1..50), seed in any::<u64>()) {
        let n = xs.len();
        let noise = model_privacy::noise::sample_iid_gaussian(n, 1.0, seed);
        let q = QuerySet::from_scalars(xs.clone()).unwrap();
        let out = assign_noise_by_query_order(&noise, &q, 0).unwrap();
        let mut a = noise.clone();
        let mut b = out.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
        for (rank, &i) in order.iter().enumerate() {
            prop_assert_eq!(out[i], noise[rank]);
        }
    }

    #[test]
    fn seeds_depend_on_every_key(master in any::<u64>(), n in 1usize..5000, u in 0.0..10.0f64, r in 0usize..1000) {
        let base = replicate_seed(master, n, u, r, Role::Queries);
        prop_assert_eq!(base, replicate_seed(master, n, u, r, Role::Queries));
        prop_assert_ne!(base, replicate_seed(master.wrapping_add(1), n, u, r, Role::Queries));
        prop_assert_ne!(base, replicate_seed(master, n + 1, u, r, Role::Queries));
        prop_assert_ne!(base, replicate_seed(master, n, u + 0.5, r, Role::Queries));
        prop_assert_ne!(base, replicate_seed(master, n, u, r + 1, Role::Queries));
        prop_assert_ne!(base, replicate_seed(master, n, u, r, Role::Defense));
    }

    #[test]
    fn mean_and_se_bounds(values in prop::collection::vec(-1e6..1e6f64, 1..100)) {
        let (mean, se) = mean_and_se(&values).unwrap();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mean >= lo - 1e-6 && mean <= hi + 1e-6);
        prop_assert!(se >= 0.0);
    }

    #[test]
    fn raw_csv_round_trips(
        privacy in prop::option::of(any::<f64>().prop_filter("finite", |v| v.is_finite())),
        budget in 0.0..100.0f64,
        sel in prop::option::of(prop::collection::vec(0usize..40, 1..6)),
        err in prop::option::of("[a-z ,\"\n]{1,20}"),
    ) {
        let row = ReplicateReport {
            scenario: "s".into(),
            defense: "d, x".into(),
            n: 10,
            budget,
            replicate: 3,
            privacy,
            utility_loss: Some(budget),
            symmetric_difference: sel.as_ref().map(|s| s.len()),
            selected_order: None,
            selected_variables: sel.map(|s| s.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";")),
            k: Some(4),
            converged: Some(true),
            error: err,
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let back: Vec<ReplicateReport> = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, vec![row]);
    }
}
