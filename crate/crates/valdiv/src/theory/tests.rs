use std::collections::{BTreeMap, BTreeSet};

use super::suites::run_suite;
use super::*;
use crate::enumerate::{GeometricConditional, RankArrangement, TableModel};
use crate::metrics::MapPolicy;
use crate::ranked_dist::{GeometricRankedModel, RankedDistribution};
use crate::valid_set::ValidSet;
use crate::TokenId;

fn set(seqs: &[&[TokenId]]) -> ValidSet {
    let owned: Vec<Vec<TokenId>> = seqs.iter().map(|s| s.to_vec()).collect();
    ValidSet::from_sequences(&owned).unwrap()
}

#[test]
fn tilted_entropy_at_zero_budget_is_ln_v() {
    for v in 1..=6usize {
        assert_eq!(tilted_entropy(0.0, v).unwrap(), (v as f64).ln());
    }
}

#[test]
fn tilted_entropy_single_branch_is_zero() {
    for a in [0.0, 0.1, 3.0, 200.0] {
        assert_eq!(tilted_entropy(a, 1).unwrap(), 0.0);
    }
}

#[test]
fn tilted_entropy_frozen_value() {
    // independently computed for a = 2, v = 2
    assert!((tilted_entropy(2.0, 2).unwrap() - 0.582_203_108_888_217_9).abs() < 1e-12);
}

#[test]
fn tilted_entropy_vanishes_for_large_budget() {
    let h = tilted_entropy(50.0, 2).unwrap();
    assert!(h > 0.0 && h < 1e-6);
}

#[test]
fn tilted_entropy_rejects_bad_arguments() {
    assert!(matches!(
        tilted_entropy(-0.1, 2),
        Err(TheoryError::BadTilt { .. })
    ));
    assert!(matches!(
        tilted_entropy(f64::NAN, 2),
        Err(TheoryError::BadTilt { .. })
    ));
    assert!(matches!(
        tilted_entropy(f64::INFINITY, 2),
        Err(TheoryError::BadTilt { .. })
    ));
    assert!(matches!(
        tilted_entropy(1.0, 0),
        Err(TheoryError::BadBranching { .. })
    ));
}

#[test]
fn entropy_loss_is_quadratic_for_small_budgets() {
    // frozen ratio against the L^2/32 approximation at L = 1e-3; the
    // subtraction from ln 2 costs a few digits, hence the loose tolerance
    let ratio = entropy_loss(1e-3, 2).unwrap() / (1e-6 / 32.0);
    assert!((ratio - 0.999_999_969_053_533_3).abs() < 1e-7);
    for v in 2..=8usize {
        let l = 1e-3;
        let v_f = v as f64;
        let quad = (v_f * v_f - 1.0) / (24.0 * v_f * v_f) * l * l;
        let r = entropy_loss(l, v).unwrap() / quad;
        assert!((r - 1.0).abs() < 0.01, "v = {v}: ratio {r}");
    }
}

#[test]
fn entropy_loss_saturates_at_ln_v() {
    assert!((entropy_loss(50.0, 2).unwrap() - 2f64.ln()).abs() < 1e-6);
    for v in 2..=6usize {
        let gap = (entropy_loss(25.0 * v as f64, v).unwrap() - (v as f64).ln()).abs();
        assert!(gap < 1e-6, "v = {v}: gap {gap}");
    }
}

#[test]
fn entropy_loss_monotone_in_budget_and_branching() {
    for v in [2usize, 3, 5] {
        let mut prev = -1.0;
        for step in 0..=40 {
            let cur = entropy_loss(0.25 * step as f64, v).unwrap();
            assert!(cur >= prev, "v = {v}, a = {}", 0.25 * step as f64);
            prev = cur;
        }
    }
    for l in [0.01, 0.5, 1.0, 3.0, 20.0] {
        let mut prev = -1.0;
        for v in 2..=8usize {
            let cur = entropy_loss(l, v).unwrap();
            assert!(cur >= prev, "l = {l}, v = {v}");
            prev = cur;
        }
    }
    // frozen neighbors at budget 1
    assert!((entropy_loss(1.0, 2).unwrap() - 0.030_299_861_980_765_84).abs() < 1e-12);
    assert!((entropy_loss(1.0, 3).unwrap() - 0.036_035_045_017_485_11).abs() < 1e-12);
}

#[test]
fn min_entropy_loss_frozen_value() {
    // min over 2..=64 at budget ln(1e9); the minimum sits at v = 2
    let c = min_entropy_loss(1e-9, 64).unwrap();
    assert!((c - 0.692_787_905_041_628_7).abs() < 1e-12);
    assert_eq!(c, entropy_loss(-(1e-9f64.ln()), 2).unwrap());
}

#[test]
fn min_entropy_loss_rejects_bad_arguments() {
    assert!(matches!(
        min_entropy_loss(0.0, 64),
        Err(TheoryError::BadEpsilon { .. })
    ));
    assert!(matches!(
        min_entropy_loss(1.0, 64),
        Err(TheoryError::BadEpsilon { .. })
    ));
    assert!(matches!(
        min_entropy_loss(0.5, 1),
        Err(TheoryError::BadVocab { .. })
    ));
}

#[test]
fn diversity_bound_per_position_is_tighter() {
    for (epsilon, branching) in [
        (1e-9, vec![2usize, 2, 2]),
        (1e-3, vec![1, 4, 2, 7]),
        (0.3, vec![5, 5]),
    ] {
        let b = diversity_bound(&TradeoffParams { epsilon, branching }).unwrap();
        assert!(b.per_position <= b.coarse + 1e-15);
        assert!(b.coarse > 0.0 && b.per_position > 0.0);
    }
}

#[test]
fn diversity_bound_ignores_forced_steps() {
    let b = diversity_bound(&TradeoffParams {
        epsilon: 1e-6,
        branching: vec![1, 1, 1],
    })
    .unwrap();
    assert_eq!(b.per_position, 1.0);
    assert_eq!(b.coarse, 1.0);
    assert_eq!(b.min_loss, 0.0);
    assert_eq!(b.branching_length, 0);
}

#[test]
fn diversity_bound_rejects_bad_arguments() {
    let good = vec![2usize, 2];
    for epsilon in [0.0, 1.0, -0.3, f64::NAN] {
        assert!(diversity_bound(&TradeoffParams {
            epsilon,
            branching: good.clone(),
        })
        .is_err());
    }
    assert!(matches!(
        diversity_bound(&TradeoffParams {
            epsilon: 0.5,
            branching: vec![],
        }),
        Err(TheoryError::EmptyBranching)
    ));
    assert!(matches!(
        diversity_bound(&TradeoffParams {
            epsilon: 0.5,
            branching: vec![2, 0],
        }),
        Err(TheoryError::BadBranching { position: 1, .. })
    ));
}

#[test]
fn recall_bound_degenerates_to_one_when_budget_covers_hard_steps() {
    // m = 1 but delta allows more than one eta-imprecise step
    let b = recall_bound(&HardStepParams {
        eta: 0.2,
        rho: 5.0,
        hard_steps: 1,
        delta: 0.5,
    })
    .unwrap();
    assert_eq!(b, 1.0);
    // a fully imprecise policy gets an infinite budget
    let b = recall_bound(&HardStepParams {
        eta: 0.2,
        rho: f64::INFINITY,
        hard_steps: 100,
        delta: 1.0,
    })
    .unwrap();
    assert_eq!(b, 1.0);
}

#[test]
fn recall_bound_monotonicities() {
    let base = HardStepParams {
        eta: 0.2,
        rho: 0.7,
        hard_steps: 5,
        delta: 0.1,
    };
    let b = recall_bound(&base).unwrap();
    assert!(
        recall_bound(&HardStepParams {
            rho: 1.4,
            ..base.clone()
        })
        .unwrap()
            < b
    );
    assert!(
        recall_bound(&HardStepParams {
            delta: 0.3,
            ..base.clone()
        })
        .unwrap()
            >= b
    );
    assert!(
        recall_bound(&HardStepParams {
            hard_steps: 6,
            ..base.clone()
        })
        .unwrap()
            < b
    );
}

#[test]
fn recall_bound_rejects_bad_arguments() {
    let base = HardStepParams {
        eta: 0.2,
        rho: 0.7,
        hard_steps: 5,
        delta: 0.1,
    };
    assert!(matches!(
        recall_bound(&HardStepParams {
            eta: 0.0,
            ..base.clone()
        }),
        Err(TheoryError::BadEta { .. })
    ));
    assert!(matches!(
        recall_bound(&HardStepParams {
            delta: 1.5,
            ..base.clone()
        }),
        Err(TheoryError::BadDelta { .. })
    ));
    assert!(matches!(
        recall_bound(&HardStepParams {
            rho: -1.0,
            ..base.clone()
        }),
        Err(TheoryError::BadRho { .. })
    ));
}

/// Two binary levels, unit sharpness, five tokens, valid tokens on top.
fn binary_geometric() -> GeometricConditional {
    let seqs: Vec<Vec<TokenId>> = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    GeometricConditional::new(
        GeometricRankedModel::constant(1.0, 2, 1.0, 5).unwrap(),
        ValidSet::from_sequences(&seqs).unwrap(),
        RankArrangement::TopRankedValid,
    )
    .unwrap()
}

#[test]
fn diversity_bound_holds_on_binary_instance() {
    let model = binary_geometric();
    let report = verify_diversity_bound(&model, 1.0, 0.25, 1e-9).unwrap();

    // closed form: per-step escape (q^2 - q^5)/(1 - q^5) at q = 1/e
    let q = (-1.0f64).exp();
    let escape = (q.powi(2) - q.powi(5)) / (1.0 - q.powi(5));
    assert!((report.validity - (1.0 - escape).powi(2)).abs() < 1e-12);

    assert!(!report.violated);
    assert!(report.chain_deviation <= 1e-9);
    assert_eq!(report.branching, vec![2, 2]);
    assert_eq!(report.tilts, vec![2.0, 2.0]);
    let h2 = tilted_entropy(2.0, 2).unwrap();
    assert!((report.chain_entropy - 2.0 * h2).abs() < 1e-15);
    assert!(report.per_position_bound <= report.finite_support_bound + 1e-15);
    assert!(report.diversity <= report.finite_support_bound);
    assert!(report.slack < 0.0);
}

#[test]
fn diversity_bound_refuses_insufficient_budget() {
    let model = binary_geometric();
    // true validity is about 0.76, so a 10% budget cannot hold
    match verify_diversity_bound(&model, 1.0, 0.1, 1e-9) {
        Err(TheoryError::PremiseViolated { failures }) => {
            assert_eq!(failures.len(), 1);
            assert!(failures[0].contains("budget"), "{failures:?}");
        }
        other => panic!("expected a premise refusal, got {other:?}"),
    }
}

#[test]
fn diversity_bound_refuses_misplaced_valid_tokens() {
    let model = GeometricConditional::new(
        GeometricRankedModel::constant(1.0, 2, 1.0, 3).unwrap(),
        set(&[&[0, 0], &[2, 0]]),
        RankArrangement::Identity,
    )
    .unwrap();
    // at the root the valid tokens are {0, 2} but the top two ranks hold
    // {0, 1}
    match verify_diversity_bound(&model, 1.0, 0.9, 1e-9) {
        Err(TheoryError::PremiseViolated { failures }) => {
            assert_eq!(failures.len(), 1);
            assert!(failures[0].contains("top"), "{failures:?}");
        }
        other => panic!("expected a premise refusal, got {other:?}"),
    }
}

/// Root has valid tokens at ranks 0 and 2 with an invalid one between; the
/// second step is forced. At eta = 0.2 only the rank-0 cut is precise
/// enough at the root, and it loses half the valid set.
fn split_rank_instance() -> (TableModel, ValidSet) {
    let valid = set(&[&[0, 0], &[2, 0]]);
    let mut model = TableModel::new(3);
    model.insert(
        vec![],
        RankedDistribution::from_probs(vec![0.5, 0.3, 0.2], Some(vec![0, 1, 2])).unwrap(),
    );
    for first in [0u32, 2] {
        model.insert(
            vec![first],
            RankedDistribution::from_probs(vec![0.6, 0.3, 0.1], Some(vec![0, 1, 2])).unwrap(),
        );
    }
    (model, valid)
}

#[test]
fn hardness_measured_on_split_rank_instance() {
    let (model, valid) = split_rank_instance();
    let hardness = measure_hardness(&model, &valid, 0.2).unwrap();
    assert_eq!(hardness.per_level, vec![0.5, 0.0]);
    assert_eq!(hardness.hard_levels, vec![0]);
    assert_eq!(hardness.rho, 0.5);
    assert_eq!(hardness.policies, 27);
}

#[test]
fn recall_bound_holds_for_every_policy_on_split_rank_instance() {
    let (model, valid) = split_rank_instance();
    let check = verify_recall_bound(&model, &valid, 0.2, 1e-9).unwrap();
    assert_eq!(check.policies, 27);
    assert_eq!(check.violations, 0);
    // the fully permissive policy sits exactly on its trivial bound
    assert!(check.max_slack.abs() < 1e-12, "{}", check.max_slack);
}

#[test]
fn decomposition_report_matches_direct_metrics() {
    let valid = set(&[&[0, 0], &[0, 1], &[1, 0]]);
    let mut sets: BTreeMap<Vec<TokenId>, BTreeSet<TokenId>> = BTreeMap::new();
    sets.insert(vec![], BTreeSet::from([0, 1]));
    sets.insert(vec![0], BTreeSet::from([1]));
    sets.insert(vec![1], BTreeSet::from([0, 2]));
    let policy = MapPolicy::new(sets);
    let report = verify_decomposition(&policy, &valid).unwrap();
    assert!(report.precision_deviation <= 1e-12);
    assert!(report.recall_deviation <= 1e-12);
    assert!((report.direct_precision - 0.75).abs() < 1e-15);
    assert!((report.direct_recall - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn suites_run_clean_at_small_sizes() {
    let d = run_suite("decomposition", Some(25), 7).unwrap();
    assert_eq!((d.instances, d.violations), (25, 0));
    assert!(d.max_slack <= d.tolerance);

    let t2 = run_suite("thm2", Some(25), 11).unwrap();
    assert_eq!((t2.instances, t2.violations), (25, 0));
    assert!(t2.max_slack <= t2.tolerance);

    let t1 = run_suite("thm1", Some(2), 3).unwrap();
    assert_eq!(t1.instances, 6); // three allowances per instance
    assert_eq!(t1.violations, 0);
    assert!(t1.max_slack <= t1.tolerance);

    let dr = run_suite("delta_regimes", None, 0).unwrap();
    assert_eq!(dr.violations, 0);
    assert_eq!(dr.max_slack, 0.0);

    assert!(matches!(
        run_suite("nope", None, 0),
        Err(TheoryError::UnknownSuite(_))
    ));
}
