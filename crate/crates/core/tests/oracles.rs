//! Library results against values computed here by other means.

use approx::assert_relative_eq;
use eolab::asymptotics::{ks_distance, sample_limit_law, LambdaRule, LimitLawParams};
use eolab::dominance::{icx_dominates, stop_loss, DominancePolicy, EmpiricalSample, Verdict};
use eolab::model::{problem_by_id, sample_dataset, true_gap};
use eolab::solvers::{solve, worst_case_expectation, ProcedureSpec};
use eolab::PhiDivergence;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Largest `q` with `KL((1-q, q) | (1/2, 1/2)) <= lambda`, by bisection.
fn kl_two_point(lambda: f64) -> f64 {
    let kl = |q: f64| {
        let t = |p: f64| if p > 0.0 { p * (2.0 * p).ln() } else { 0.0 };
        t(q) + t(1.0 - q)
    };
    let (mut lo, mut hi) = (0.5, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kl(mid) <= lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn kl_worst_case_on_two_points() {
    for lambda in [1e-3, 0.05, 0.3] {
        let wc = worst_case_expectation(&[0.0, 1.0], &PhiDivergence::kl(), lambda).unwrap();
        assert_relative_eq!(wc.value, kl_two_point(lambda), epsilon = 1e-9);
    }
}

#[test]
fn large_kl_ball_reaches_the_maximum() {
    // KL of the uniform law on k of n points is ln(n/k).
    let h = [0.0, 2.0, 1.0, 2.0];
    let wc = worst_case_expectation(&h, &PhiDivergence::kl(), 2f64.ln() + 1e-9).unwrap();
    assert_eq!(wc.value, 2.0);
    assert_eq!(wc.weights, vec![0.0, 0.5, 0.0, 0.5]);
    let inside = worst_case_expectation(&h, &PhiDivergence::kl(), 0.5).unwrap();
    assert!(inside.value < 2.0 && inside.value > 1.25);
}

#[test]
fn chi2_worst_case_is_mean_plus_sd() {
    // With phi = (t - 1)^2 the ball sup is mean + sqrt(lambda Var) while
    // every weight stays positive.
    let h = [0.3, 1.1, -0.4, 2.0, 0.9];
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    for lambda in [1e-4, 1e-2, 0.05] {
        let wc = worst_case_expectation(&h, &PhiDivergence::chi2(), lambda).unwrap();
        assert_relative_eq!(wc.value, mean + (lambda * var).sqrt(), epsilon = 1e-12);
    }
}

#[test]
fn ridge_and_gap_closed_forms() {
    let p = problem_by_id("shifted-gaussian-mean").unwrap();
    let data = sample_dataset(&p, 300, 5);
    let mean = data.mean_draw();
    let lambda = 0.2;
    let x = solve(&p, &data, &ProcedureSpec::ridge(lambda)).unwrap().x;
    for (a, m) in x.iter().zip(&mean) {
        assert_relative_eq!(*a, m / (1.0 + lambda), epsilon = 1e-12);
    }
    // Z(x) - Z(x*) = |x - mu|^2 / 2 for unit covariance.
    let gap = true_gap(&p, &x).unwrap();
    assert_relative_eq!(gap, 0.5 * ((x[0] - 1.0).powi(2) + x[1].powi(2)), epsilon = 1e-12);
}

#[test]
fn limit_law_with_zero_noise_is_the_shift() {
    let params = LimitLawParams::new(
        DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        DMatrix::zeros(2, 2),
        DVector::from_column_slice(&[1.0, -1.0]),
        0.5,
    )
    .unwrap();
    // 1/2 a^2 K'HK = 1/2 * 1/4 * 3.
    let s = sample_limit_law(&params, 50, 1).unwrap();
    assert!(s.sample.values().iter().all(|v| (v - 0.375).abs() < 1e-15));
}

#[test]
fn stop_loss_by_hand() {
    let s = EmpiricalSample::new("s", vec![3.0, -1.0, 0.5, 2.0]).unwrap();
    for t in [-2.0, -1.0, 0.0, 0.5, 1.7, 3.0, 4.0] {
        let direct = s.values().iter().map(|v| (v - t).max(0.0)).sum::<f64>() / 4.0;
        assert_relative_eq!(stop_loss(&s, t), direct, epsilon = 1e-15);
    }
}

#[test]
fn lambda_rules() {
    assert_eq!(LambdaRule::Constant { c: 0.3 }.resolve(10), 0.3);
    assert_relative_eq!(LambdaRule::Power { gamma: 0.5 }.resolve(400), 0.05, epsilon = 1e-15);
    assert_relative_eq!(LambdaRule::AOverSqrtN { a: 2.0 }.resolve(100), 0.2, epsilon = 1e-15);
}

fn sample(values: Vec<f64>) -> EmpiricalSample {
    EmpiricalSample::new("p", values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dominance_is_reflexive(v in prop::collection::vec(-10.0f64..10.0, 1..80)) {
        let s = sample(v);
        prop_assert_eq!(icx_dominates(&s, &s, &DominancePolicy::default()).verdict, Verdict::Dominated);
    }

    #[test]
    fn shifting_up_dominates(v in prop::collection::vec(-10.0f64..10.0, 1..80), c in 0.0f64..5.0) {
        let a = sample(v.clone());
        let b = sample(v.iter().map(|x| x + c).collect());
        prop_assert_eq!(icx_dominates(&a, &b, &DominancePolicy::default()).verdict, Verdict::Dominated);
    }

    #[test]
    fn ks_is_a_symmetric_distance(
        a in prop::collection::vec(-5.0f64..5.0, 1..50),
        b in prop::collection::vec(-5.0f64..5.0, 1..50),
    ) {
        let (a, b) = (sample(a), sample(b));
        let d = ks_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_distance(&b, &a));
        prop_assert_eq!(ks_distance(&a, &a), 0.0);
    }

    #[test]
    fn worst_case_brackets_mean_and_max(
        h in prop::collection::vec(-3.0f64..3.0, 2..40),
        lambda in 1e-4f64..1.0,
    ) {
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for div in [PhiDivergence::kl(), PhiDivergence::chi2()] {
            let wc = worst_case_expectation(&h, &div, lambda).unwrap();
            prop_assert!(wc.value >= mean - 1e-10);
            prop_assert!(wc.value <= max + 1e-10);
        }
    }
}
