//! Measured step hardness via exhaustive policy enumeration.
//!
//! A rank-cut policy picks, at every valid prefix, how many top ranks of
//! the model distribution survive. On instances small enough to enumerate
//! every such policy we can measure hardness directly instead of assuming
//! it: for each level t, rho_t(eta) is the least per-level recall loss
//! 1 - beta_t among enumerated policies whose per-level escape 1 - alpha_t
//! stays within eta. A level nobody can pass eta-precisely gets the cap. By
//! construction any policy that is eta-precise at a hard level pays at
//! least rho there, which is exactly the premise of the compounding recall
//! bound; the verifier then checks the bound against every policy's actual
//! precision and recall.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{recall_bound, HardStepParams, TheoryError, HARDNESS_FLOOR, RHO_CAP};
use crate::enumerate::ConditionalModel;
use crate::metrics::{decomposition_factors, MetricsError, Policy};
use crate::valid_set::ValidSet;
use crate::TokenId;

/// Refuse instances with more rank-cut policies than this.
pub const POLICY_CAP: u128 = 200_000;

/// Per-level hardness at a given eta, measured over the whole policy space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredHardness {
    pub eta: f64,
    /// rho_t per level; [`RHO_CAP`] marks levels where eta-precision is
    /// impossible outright.
    pub per_level: Vec<f64>,
    /// Levels whose hardness exceeds the measurement floor.
    pub hard_levels: Vec<usize>,
    /// min over hard levels, zero when there are none.
    pub rho: f64,
    pub policies: u128,
}

/// Outcome of checking the recall bound against every enumerated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallBoundCheck {
    pub hardness: MeasuredHardness,
    pub policies: usize,
    pub violations: usize,
    /// max over policies of measured recall minus its bound.
    pub max_slack: f64,
    pub tolerance: f64,
}

/// Retained sets for one prefix at every possible cut index.
struct PrefixCuts {
    prefix: Vec<TokenId>,
    sets: Vec<BTreeSet<TokenId>>,
}

struct CutPolicy<'a> {
    slots: &'a BTreeMap<Vec<TokenId>, usize>,
    cuts_by_slot: &'a [PrefixCuts],
    assignment: &'a [usize],
}

impl Policy for CutPolicy<'_> {
    fn retained(&self, prefix: &[TokenId]) -> Result<BTreeSet<TokenId>, MetricsError> {
        let &slot = self
            .slots
            .get(prefix)
            .ok_or_else(|| MetricsError::PrefixNotCovered {
                prefix: prefix.to_vec(),
            })?;
        Ok(self.cuts_by_slot[slot].sets[self.assignment[slot]].clone())
    }
}

fn collect_cuts(
    model: &dyn ConditionalModel,
    valid: &ValidSet,
) -> Result<Vec<PrefixCuts>, TheoryError> {
    let mut prefixes = BTreeSet::new();
    for seq in valid.sequences() {
        for len in 0..valid.depth() {
            prefixes.insert(seq[..len].to_vec());
        }
    }
    let mut out = Vec::with_capacity(prefixes.len());
    for prefix in prefixes {
        let dist = model.distribution(&prefix)?;
        let mut sets = Vec::with_capacity(dist.len());
        let mut acc = BTreeSet::new();
        for rank in 0..dist.len() {
            let token = dist
                .token(rank)
                .ok_or_else(|| TheoryError::PremiseViolated {
                    failures: vec![format!("distribution at {prefix:?} lacks token identities")],
                })?;
            acc.insert(token);
            sets.push(acc.clone());
        }
        out.push(PrefixCuts { prefix, sets });
    }
    Ok(out)
}

/// Runs `visit` once per policy with (per-level (escape, loss) pairs,
/// precision, recall) and returns the number of policies.
fn for_each_policy(
    model: &dyn ConditionalModel,
    valid: &ValidSet,
    mut visit: impl FnMut(&[(f64, f64)], f64, f64),
) -> Result<u128, TheoryError> {
    let cuts = collect_cuts(model, valid)?;
    let mut total: u128 = 1;
    for c in &cuts {
        total = total.saturating_mul(c.sets.len() as u128);
        if total > POLICY_CAP {
            return Err(TheoryError::TooManyPolicies {
                count: total,
                cap: POLICY_CAP,
            });
        }
    }
    let slots: BTreeMap<Vec<TokenId>, usize> = cuts
        .iter()
        .enumerate()
        .map(|(i, c)| (c.prefix.clone(), i))
        .collect();

    let mut assignment = vec![0usize; cuts.len()];
    let mut levels = Vec::with_capacity(valid.depth());
    loop {
        let policy = CutPolicy {
            slots: &slots,
            cuts_by_slot: &cuts,
            assignment: &assignment,
        };
        let d = decomposition_factors(&policy, valid)?;
        levels.clear();
        for (&a, &b) in d.alphas.iter().zip(&d.betas) {
            levels.push((1.0 - a, 1.0 - b));
        }
        visit(&levels, d.precision, d.recall);

        // odometer over cut indices
        let mut slot = 0;
        loop {
            if slot == assignment.len() {
                return Ok(total);
            }
            assignment[slot] += 1;
            if assignment[slot] < cuts[slot].sets.len() {
                break;
            }
            assignment[slot] = 0;
            slot += 1;
        }
    }
}

/// Measures per-level hardness at `eta` by enumerating every rank-cut
/// policy on the instance.
pub fn measure_hardness(
    model: &dyn ConditionalModel,
    valid: &ValidSet,
    eta: f64,
) -> Result<MeasuredHardness, TheoryError> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(TheoryError::BadEta { value: eta });
    }
    let mut min_loss = vec![f64::INFINITY; valid.depth()];
    let policies = for_each_policy(model, valid, |levels, _, _| {
        for (t, &(escape, loss)) in levels.iter().enumerate() {
            if escape <= eta + 1e-12 {
                min_loss[t] = min_loss[t].min(loss);
            }
        }
    })?;
    let per_level: Vec<f64> = min_loss
        .into_iter()
        .map(|v| if v.is_finite() { v } else { RHO_CAP })
        .collect();
    let hard_levels: Vec<usize> = per_level
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > HARDNESS_FLOOR)
        .map(|(t, _)| t)
        .collect();
    let rho = hard_levels
        .iter()
        .map(|&t| per_level[t])
        .fold(f64::INFINITY, f64::min);
    Ok(MeasuredHardness {
        eta,
        rho: if hard_levels.is_empty() { 0.0 } else { rho },
        per_level,
        hard_levels,
        policies,
    })
}

/// Checks the compounding recall bound, instantiated with the measured
/// hardness, against every rank-cut policy on the instance.
pub fn verify_recall_bound(
    model: &dyn ConditionalModel,
    valid: &ValidSet,
    eta: f64,
    tolerance: f64,
) -> Result<RecallBoundCheck, TheoryError> {
    let hardness = measure_hardness(model, valid, eta)?;
    let mut outcomes: Vec<(f64, f64)> = Vec::new();
    for_each_policy(model, valid, |_, precision, recall| {
        outcomes.push((precision, recall));
    })?;

    let mut violations = 0;
    let mut max_slack = f64::NEG_INFINITY;
    for &(precision, recall) in &outcomes {
        let bound = recall_bound(&HardStepParams {
            eta,
            rho: hardness.rho,
            hard_steps: hardness.hard_levels.len(),
            delta: (1.0 - precision).clamp(0.0, 1.0),
        })?;
        let slack = recall - bound;
        max_slack = max_slack.max(slack);
        if slack > tolerance {
            violations += 1;
        }
    }
    Ok(RecallBoundCheck {
        hardness,
        policies: outcomes.len(),
        violations,
        max_slack,
        tolerance,
    })
}
