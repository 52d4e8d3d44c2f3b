//! Named batteries of randomized and fixed checks, runnable from the CLI.
//!
//! Each suite draws its instances from a seeded generator, runs one check
//! per instance, and reports how many checks exceeded their tolerance along
//! with the worst slack seen. Slack is signed where the check is an
//! inequality (measured minus bound, so negative means comfortable) and an
//! absolute deviation where it is an identity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    diversity_bound, entropy_loss, min_entropy_loss, verify_diversity_bound, verify_recall_bound,
    TheoryError, TradeoffParams,
};
use crate::cutoff::{CutoffRule, InducedMode};
use crate::enumerate::{
    exact_sequence_distribution, GeometricConditional, RankArrangement, TableModel,
};
use crate::metrics::{decomposition_factors, sequence_precision, sequence_recall, MapPolicy};
use crate::ranked_dist::{GeometricRankedModel, RankedDistribution};
use crate::valid_set::ValidSet;
use crate::TokenId;

/// Aggregate outcome of one suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub check: String,
    pub instances: usize,
    pub violations: usize,
    pub max_slack: f64,
    pub tolerance: f64,
}

/// Runs the suite named `check`. `instances` overrides the default count
/// for the randomized suites and is ignored by the fixed one.
pub fn run_suite(
    check: &str,
    instances: Option<usize>,
    seed: u64,
) -> Result<SuiteReport, TheoryError> {
    match check {
        "decomposition" => decomposition_suite(instances.unwrap_or(500), seed),
        "thm1" => recall_bound_suite(instances.unwrap_or(20), seed),
        "thm2" => diversity_bound_suite(instances.unwrap_or(1000), seed),
        "delta_regimes" => delta_regime_suite(),
        other => Err(TheoryError::UnknownSuite(other.to_string())),
    }
}

fn random_valid_set(rng: &mut ChaCha8Rng) -> ValidSet {
    loop {
        let depth = rng.gen_range(2..=4);
        let count = rng.gen_range(1..=25);
        let mut seqs: BTreeSet<Vec<TokenId>> = BTreeSet::new();
        for _ in 0..count {
            seqs.insert((0..depth).map(|_| rng.gen_range(0..5)).collect());
        }
        let seqs: Vec<Vec<TokenId>> = seqs.into_iter().collect();
        if let Ok(set) = ValidSet::from_sequences(&seqs) {
            return set;
        }
    }
}

/// A policy retaining a random nonempty token subset at every valid
/// prefix. Tokens range one past the valid alphabet so retained sets can
/// stick out of it, and whole levels can miss the valid set entirely.
fn random_subset_policy(valid: &ValidSet, rng: &mut ChaCha8Rng) -> MapPolicy {
    let mut sets = BTreeMap::new();
    let mut stack: Vec<Vec<TokenId>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == valid.depth() {
            continue;
        }
        let mut retained = BTreeSet::new();
        while retained.is_empty() {
            for t in 0..6u32 {
                if rng.gen_bool(0.5) {
                    retained.insert(t);
                }
            }
        }
        sets.insert(prefix.clone(), retained);
        for t in valid.valid_tokens(&prefix) {
            let mut next = prefix.clone();
            next.push(t);
            stack.push(next);
        }
    }
    MapPolicy::new(sets)
}

/// Checks the exact step factorization of sequence precision and recall on
/// random valid sets under random retention policies.
fn decomposition_suite(instances: usize, seed: u64) -> Result<SuiteReport, TheoryError> {
    let tolerance = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_slack = f64::NEG_INFINITY;
    for _ in 0..instances {
        let valid = random_valid_set(&mut rng);
        let policy = random_subset_policy(&valid, &mut rng);
        let d = decomposition_factors(&policy, &valid)?;
        let prec = sequence_precision(&policy, &valid)?;
        let rec = sequence_recall(&policy, &valid)?;
        let dev = (d.precision - prec).abs().max((d.recall - rec).abs());
        max_slack = max_slack.max(dev);
        if dev > tolerance {
            violations += 1;
        }
    }
    Ok(SuiteReport {
        check: "decomposition".into(),
        instances,
        violations,
        max_slack,
        tolerance,
    })
}

/// Checks the diversity ceiling on random geometric instances whose valid
/// sets are level products, so the premises hold by construction.
fn diversity_bound_suite(instances: usize, seed: u64) -> Result<SuiteReport, TheoryError> {
    let tolerance = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_slack = f64::NEG_INFINITY;
    for _ in 0..instances {
        let depth = rng.gen_range(1..=4);
        let branching: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=5)).collect();
        let vmax = branching.iter().copied().max().unwrap();
        let vocab = vmax + rng.gen_range(1..=8);
        // keep the tail mass q^W away from both 0 and 1 so instances are
        // neither saturated nor numerically degenerate
        let w = vocab as f64;
        let lambdas: Vec<f64> = (0..depth)
            .map(|_| rng.gen_range((1.0f64 / 0.9).ln() / w..=1e9f64.ln() / w))
            .collect();

        let mut seqs: Vec<Vec<TokenId>> = vec![Vec::new()];
        for &v in &branching {
            seqs = seqs
                .into_iter()
                .flat_map(|s| {
                    (0..v as TokenId).map(move |t| {
                        let mut next = s.clone();
                        next.push(t);
                        next
                    })
                })
                .collect();
        }
        let valid = ValidSet::from_sequences(&seqs).expect("product set is well formed");
        let model = GeometricConditional::new(
            GeometricRankedModel::new(lambdas, 1.0, vocab)?,
            valid,
            RankArrangement::TopRankedValid,
        )?;

        let rule = CutoffRule::no_filter(1.0)?;
        let sd =
            exact_sequence_distribution(&model, &rule, model.valid(), InducedMode::Renormalized)?;
        let validity = sd.validity(model.valid());
        let epsilon = ((1.0 - validity) * (1.0 + 1e-6) + 1e-12).min(1.0 - 1e-10);
        let report = verify_diversity_bound(&model, 1.0, epsilon, tolerance)?;
        max_slack = max_slack.max(report.slack);
        if report.violated || report.chain_deviation > tolerance {
            violations += 1;
        }
    }
    Ok(SuiteReport {
        check: "thm2".into(),
        instances,
        violations,
        max_slack,
        tolerance,
    })
}

/// Checks the compounding recall bound against every rank-cut policy on
/// small random two-level tables, across several precision allowances.
fn recall_bound_suite(instances: usize, seed: u64) -> Result<SuiteReport, TheoryError> {
    let tolerance = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = 0;
    let mut violations = 0;
    let mut max_slack = f64::NEG_INFINITY;
    for _ in 0..instances {
        let vocab = rng.gen_range(3..=4);
        let valid = loop {
            let count = rng.gen_range(2..=6);
            let mut seqs: BTreeSet<Vec<TokenId>> = BTreeSet::new();
            for _ in 0..count {
                seqs.insert(vec![
                    rng.gen_range(0..vocab as TokenId),
                    rng.gen_range(0..vocab as TokenId),
                ]);
            }
            let seqs: Vec<Vec<TokenId>> = seqs.into_iter().collect();
            if let Ok(set) = ValidSet::from_sequences(&seqs) {
                break set;
            }
        };

        let mut model = TableModel::new(vocab);
        let mut prefixes: Vec<Vec<TokenId>> = vec![Vec::new()];
        prefixes.extend(valid.valid_tokens(&[]).into_iter().map(|t| vec![t]));
        for prefix in prefixes {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut tokens: Vec<TokenId> = (0..vocab as TokenId).collect();
            tokens.shuffle(&mut rng);
            let dist = RankedDistribution::from_logits(&logits)?.with_tokens(tokens)?;
            model.insert(prefix, dist);
        }

        for eta in [0.15, 0.25, 0.4] {
            let check = verify_recall_bound(&model, &valid, eta, tolerance)?;
            checks += 1;
            violations += usize::from(check.violations > 0);
            max_slack = max_slack.max(check.max_slack);
        }
    }
    Ok(SuiteReport {
        check: "thm1".into(),
        instances: checks,
        violations,
        max_slack,
        tolerance,
    })
}

/// Fixed checks on the entropy-loss curve: quadratic behavior for small
/// budgets, saturation at ln v for large ones, monotonicity in both
/// arguments, and the frozen minimal loss used by the coarse bound.
///
/// Each check carries its own limit; the reported slack is the worst
/// excess beyond a limit, zero when everything is within.
fn delta_regime_suite() -> Result<SuiteReport, TheoryError> {
    let mut devs: Vec<f64> = Vec::new();

    // small budgets: loss is (v^2 - 1)/(24 v^2) L^2 to within 1%
    for v in 2..=8usize {
        let l = 1e-3;
        let v_f = v as f64;
        let quad = (v_f * v_f - 1.0) / (24.0 * v_f * v_f) * l * l;
        let ratio = entropy_loss(l, v)? / quad;
        devs.push(((ratio - 1.0).abs() - 0.01).max(0.0));
    }

    // large budgets: loss saturates at ln v
    for v in 2..=6usize {
        let gap = (entropy_loss(25.0 * v as f64, v)? - (v as f64).ln()).abs();
        devs.push((gap - 1e-6).max(0.0));
    }

    // monotone in the budget
    for v in [2usize, 3, 5] {
        let mut prev = 0.0;
        let mut worst: f64 = 0.0;
        for step in 0..=20 {
            let cur = entropy_loss(0.25 * step as f64, v)?;
            worst = worst.max(prev - cur);
            prev = cur;
        }
        devs.push(worst);
    }

    // monotone in the branching factor
    for l in [0.01, 0.5, 1.0, 3.0, 20.0] {
        let mut prev = 0.0;
        let mut worst: f64 = 0.0;
        for v in 2..=8usize {
            let cur = entropy_loss(l, v)?;
            worst = worst.max(prev - cur);
            prev = cur;
        }
        devs.push(worst);
    }

    // strictly positive away from zero budget
    {
        let mut least = f64::INFINITY;
        for v in [2usize, 3, 5, 8] {
            for step in 1..=20 {
                least = least.min(entropy_loss(0.25 * step as f64, v)?);
            }
        }
        devs.push((1e-6 - least).max(0.0));
    }

    // frozen minimal loss at the suite's reference budget
    devs.push(((min_entropy_loss(1e-9, 64)? - 0.692_787_905_041_628_7).abs() - 1e-12).max(0.0));

    // per-position ceiling never exceeds the coarse one
    for (epsilon, branching) in [
        (1e-9, vec![2usize, 2, 2]),
        (1e-3, vec![1, 4, 2, 7]),
        (0.3, vec![5, 5]),
    ] {
        let b = diversity_bound(&TradeoffParams { epsilon, branching })?;
        devs.push((b.per_position - b.coarse).max(0.0));
    }

    let violations = devs.iter().filter(|&&d| d > 0.0).count();
    let max_slack = devs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SuiteReport {
        check: "delta_regimes".into(),
        instances: devs.len(),
        violations,
        max_slack,
        tolerance: 0.0,
    })
}
