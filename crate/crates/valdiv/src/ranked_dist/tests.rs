use super::*;
use proptest::prelude::*;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let d = RankedDistribution::from_logits(&[0.0, 0.0]).unwrap();
    assert_eq!(d.probs(), &[0.5, 0.5]);
    assert_eq!(d.tokens(), Some(&[0, 1][..]));
}

#[test]
fn softmax_ln2_gap() {
    let d = RankedDistribution::from_logits(&[std::f64::consts::LN_2, 0.0]).unwrap();
    assert_close(d.prob(0), 2.0 / 3.0, 1e-12);
    assert_close(d.prob(1), 1.0 / 3.0, 1e-12);
}

#[test]
fn softmax_is_stable_under_large_logits() {
    let d = RankedDistribution::from_logits(&[1000.0, 0.0]).unwrap();
    assert!(d.prob(0) >= 1.0 - 1e-15);
    assert!(d.prob(1) >= 0.0);
    assert!(d.probs().iter().all(|p| p.is_finite()));
}

#[test]
fn softmax_breaks_ties_by_input_order() {
    let d = RankedDistribution::from_logits(&[7.0, 7.0, 7.0]).unwrap();
    assert_eq!(d.tokens(), Some(&[0, 1, 2][..]));
}

#[test]
fn nan_logit_names_offending_index() {
    let err = RankedDistribution::from_logits(&[0.0, f64::NAN, 1.0]).unwrap_err();
    match err {
        DistributionError::NonFinite { index, .. } => assert_eq!(index, 1),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn empty_logits_rejected() {
    assert!(matches!(
        RankedDistribution::from_logits(&[]),
        Err(DistributionError::Empty)
    ));
}

#[test]
fn from_probs_validates_order_mass_and_range() {
    assert!(RankedDistribution::from_probs(vec![0.5, 0.3, 0.15, 0.05], None).is_ok());
    assert!(matches!(
        RankedDistribution::from_probs(vec![0.3, 0.7], None),
        Err(DistributionError::NotSorted { index: 1 })
    ));
    assert!(matches!(
        RankedDistribution::from_probs(vec![0.5, 0.3], None),
        Err(DistributionError::BadMass { .. })
    ));
    assert!(matches!(
        RankedDistribution::from_probs(vec![1.5, -0.5], None),
        Err(DistributionError::OutOfRange { index: 0, .. })
    ));
}

#[test]
fn duplicate_tokens_rejected() {
    let err = RankedDistribution::from_probs(vec![0.6, 0.4], Some(vec![3, 3])).unwrap_err();
    assert!(matches!(
        err,
        DistributionError::DuplicateToken { token: 3 }
    ));
}

#[test]
fn temperature_half_sharpens() {
    let d = RankedDistribution::from_probs(vec![0.8, 0.2], None).unwrap();
    let s = d.temperature_scale(0.5).unwrap();
    // p^2 renormalized: 0.64/0.68, 0.04/0.68
    assert_close(s.prob(0), 16.0 / 17.0, 1e-12);
    assert_close(s.prob(1), 1.0 / 17.0, 1e-12);
}

#[test]
fn temperature_one_is_exact_identity() {
    let d = RankedDistribution::from_probs(vec![0.8, 0.2], None).unwrap();
    assert_eq!(d.temperature_scale(1.0).unwrap(), d);
}

#[test]
fn temperature_to_infinity_flattens() {
    let d = RankedDistribution::from_probs(vec![0.8, 0.2], None).unwrap();
    let s = d.temperature_scale(1e12).unwrap();
    assert_close(s.prob(0), 0.5, 1e-9);
    assert_close(s.prob(1), 0.5, 1e-9);
}

#[test]
fn zero_probability_stays_zero_under_temperature() {
    let d = RankedDistribution::from_probs(vec![1.0, 0.0], None).unwrap();
    let s = d.temperature_scale(10.0).unwrap();
    assert_eq!(s.probs(), &[1.0, 0.0]);
}

#[test]
fn nonpositive_temperature_rejected() {
    let d = RankedDistribution::from_probs(vec![0.8, 0.2], None).unwrap();
    assert!(matches!(
        d.temperature_scale(0.0),
        Err(DistributionError::BadTemperature { .. })
    ));
    assert!(matches!(
        d.temperature_scale(-1.0),
        Err(DistributionError::BadTemperature { .. })
    ));
}

#[test]
fn geometric_ln2_two_tokens() {
    let m = GeometricRankedModel::constant(std::f64::consts::LN_2, 1, 1.0, 2).unwrap();
    let d = m.distribution(0).unwrap();
    assert_close(d.prob(0), 2.0 / 3.0, 1e-12);
    assert_close(d.prob(1), 1.0 / 3.0, 1e-12);
}

#[test]
fn geometric_head_mass_matches_finite_sum() {
    // lambda = 1, vocab 10: top-2 mass (1 + e^-1) / sum_{i<10} e^-i
    let m = GeometricRankedModel::constant(1.0, 1, 1.0, 10).unwrap();
    let d = m.distribution(0).unwrap();
    assert_close(d.prob(0) + d.prob(1), 0.864_703_974_263_084_3, 1e-12);
}

#[test]
fn geometric_large_sharpness_concentrates() {
    let m = GeometricRankedModel::constant(50.0, 1, 1.0, 100).unwrap();
    let d = m.distribution(0).unwrap();
    assert!(d.prob(0) > 1.0 - 1e-12);
}

#[test]
fn geometric_rejects_bad_params() {
    assert!(matches!(
        GeometricRankedModel::constant(0.0, 1, 1.0, 4),
        Err(DistributionError::BadSharpness { .. })
    ));
    assert!(matches!(
        GeometricRankedModel::constant(-2.0, 1, 1.0, 4),
        Err(DistributionError::BadSharpness { .. })
    ));
    assert!(matches!(
        GeometricRankedModel::constant(1.0, 1, 0.0, 4),
        Err(DistributionError::BadTemperature { .. })
    ));
    assert!(matches!(
        GeometricRankedModel::constant(1.0, 1, 1.0, 0),
        Err(DistributionError::Empty)
    ));
    let m = GeometricRankedModel::constant(1.0, 2, 1.0, 4).unwrap();
    assert!(matches!(
        m.distribution(2),
        Err(DistributionError::PositionOutOfRange { position: 2, .. })
    ));
}

#[test]
fn entropy_of_uniform_is_log_n() {
    let d = RankedDistribution::uniform(8).unwrap();
    assert_close(d.entropy(), (8f64).ln(), 1e-12);
}

#[test]
fn entropy_of_point_mass_is_zero() {
    let d = RankedDistribution::from_probs(vec![1.0, 0.0, 0.0], None).unwrap();
    assert_eq!(d.entropy(), 0.0);
}

#[test]
fn entropy_matches_direct_evaluation() {
    let p = [0.7311, 0.2689];
    let expected: f64 = -p.iter().map(|&x: &f64| x * x.ln()).sum::<f64>();
    let d = RankedDistribution::from_probs(p.to_vec(), None).unwrap();
    assert_close(d.entropy(), expected, 1e-12);
    assert_close(expected, 0.582_161_683_154_841_7, 1e-12);
}

#[test]
fn logit_vector_from_scores_sorts_descending() {
    let v = LogitVector::from_scores(vec![1.0, 3.0, 2.0]).unwrap();
    assert_eq!(v.values(), &[3.0, 2.0, 1.0]);
}

#[test]
fn logit_vector_from_ranked_keeps_order() {
    let v = LogitVector::from_ranked(vec![1.0, 3.0, 2.0]).unwrap();
    assert_eq!(v.values(), &[1.0, 3.0, 2.0]);
}

#[test]
fn logit_vector_temperature_matches_softmax() {
    let v = LogitVector::from_scores(vec![2.0, 0.0]).unwrap();
    let d = v.at_temperature(2.0).unwrap();
    let direct = RankedDistribution::from_logits(&[1.0, 0.0]).unwrap();
    assert_close(d.prob(0), direct.prob(0), 1e-15);
}

fn synth_piecewise(n: usize, m: f64, b: f64, c: usize, a: f64, bb: f64, cc: f64) -> LogitVector {
    let vals: Vec<f64> = (0..n)
        .map(|k| {
            if k <= c {
                m * k as f64 + b
            } else {
                a + bb * (k as f64 + cc).ln()
            }
        })
        .collect();
    LogitVector::from_ranked(vals).unwrap()
}

#[test]
fn piecewise_fit_recovers_exact_parameters() {
    let v = synth_piecewise(1000, -0.5, 10.0, 50, 3.0, -2.0, 1.0);
    let fit = fit_piecewise(&v).unwrap();
    assert_eq!(fit.breakpoint, 50);
    assert_close(fit.slope, -0.5, 1e-6);
    assert_close(fit.intercept, 10.0, 1e-6);
    assert_close(fit.tail_offset, 3.0, 1e-6);
    assert_close(fit.tail_scale, -2.0, 1e-6);
    assert_close(fit.tail_shift, 1.0, 1e-6);
    assert!(fit.r_squared >= 1.0 - 1e-9, "r2 = {}", fit.r_squared);
    assert!(!fit.degenerate);
}

#[test]
fn piecewise_fit_on_linear_input_has_empty_tail() {
    let vals: Vec<f64> = (0..200).map(|k| 4.0 - 0.25 * k as f64).collect();
    let v = LogitVector::from_ranked(vals).unwrap();
    let fit = fit_piecewise(&v).unwrap();
    assert_eq!(fit.breakpoint, 199);
    assert_close(fit.slope, -0.25, 1e-9);
    assert_close(fit.intercept, 4.0, 1e-9);
}

#[test]
fn piecewise_fit_on_constant_input_is_degenerate() {
    let v = LogitVector::from_ranked(vec![2.5; 64]).unwrap();
    let fit = fit_piecewise(&v).unwrap();
    assert!(fit.degenerate);
    assert_eq!(fit.slope, 0.0);
    assert_eq!(fit.tail_scale, 0.0);
    assert_eq!(fit.mse, 0.0);
}

#[test]
fn piecewise_fit_needs_enough_points() {
    let v = LogitVector::from_ranked(vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(
        fit_piecewise(&v),
        Err(DistributionError::TooFewPoints { needed: 8, got: 3 })
    ));
}

#[test]
fn fitted_curve_evaluates_both_pieces() {
    let v = synth_piecewise(100, -1.0, 5.0, 20, 2.0, -1.5, 3.0);
    let fit = fit_piecewise(&v).unwrap();
    for (k, &y) in v.values().iter().enumerate() {
        assert_close(fit.value_at(k), y, 1e-6);
    }
}

proptest! {
    #[test]
    fn softmax_output_is_sorted_and_normalized(logits in proptest::collection::vec(-30.0..30.0f64, 1..40)) {
        let d = RankedDistribution::from_logits(&logits).unwrap();
        let sum: f64 = d.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for i in 1..d.len() {
            prop_assert!(d.prob(i) <= d.prob(i - 1));
        }
        prop_assert!(d.probs().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn temperature_preserves_rank_order(
        logits in proptest::collection::vec(-10.0..10.0f64, 2..20),
        t in 0.05..20.0f64,
    ) {
        let d = RankedDistribution::from_logits(&logits).unwrap();
        let s = d.temperature_scale(t).unwrap();
        prop_assert_eq!(d.tokens(), s.tokens());
        for i in 1..s.len() {
            prop_assert!(s.prob(i) <= s.prob(i - 1) + 1e-15);
        }
    }

    #[test]
    fn temperature_composes_multiplicatively(
        logits in proptest::collection::vec(-5.0..5.0f64, 2..10),
        t1 in 0.2..4.0f64,
        t2 in 0.2..4.0f64,
    ) {
        let d = RankedDistribution::from_logits(&logits).unwrap();
        let ab = d.temperature_scale(t1).unwrap().temperature_scale(t2).unwrap();
        let once = d.temperature_scale(t1 * t2).unwrap();
        for i in 0..d.len() {
            prop_assert!((ab.prob(i) - once.prob(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_has_constant_ratio(lambda in 0.05..4.0f64, t in 0.2..4.0f64, v in 2..30usize) {
        let m = GeometricRankedModel::constant(lambda, 1, t, v).unwrap();
        let d = m.distribution(0).unwrap();
        let q = m.ratio(0);
        for i in 1..v {
            prop_assert!((d.prob(i) / d.prob(i - 1) - q).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_is_bounded_by_log_support(logits in proptest::collection::vec(-8.0..8.0f64, 1..30)) {
        let d = RankedDistribution::from_logits(&logits).unwrap();
        let h = d.entropy();
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (d.len() as f64).ln() + 1e-9);
    }
}
