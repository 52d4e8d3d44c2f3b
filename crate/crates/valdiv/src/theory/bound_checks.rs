//! End-to-end verification of the two bounds on concrete instances.

use serde::{Deserialize, Serialize};

use super::{diversity_bound, entropy_loss, tilted_entropy, TheoryError, TradeoffParams};
use crate::cutoff::{CutoffRule, InducedMode};
use crate::enumerate::{exact_sequence_distribution, ConditionalModel, GeometricConditional};
use crate::metrics::{
    decomposition_factors, sequence_precision, sequence_recall, Decomposition, Policy,
};
use crate::valid_set::ValidSet;
use crate::TokenId;

/// Per-step factors against the directly computed sequence metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub decomposition: Decomposition,
    pub direct_precision: f64,
    pub direct_recall: f64,
    pub precision_deviation: f64,
    pub recall_deviation: f64,
}

/// Computes the factorization and the direct metrics independently: the
/// factors by level ratios, the metrics by leaf-path accumulation.
pub fn verify_decomposition(
    policy: &dyn Policy,
    valid: &ValidSet,
) -> Result<DecompositionReport, TheoryError> {
    let decomposition = decomposition_factors(policy, valid)?;
    let direct_precision = sequence_precision(policy, valid)?;
    let direct_recall = sequence_recall(policy, valid)?;
    Ok(DecompositionReport {
        precision_deviation: (decomposition.precision - direct_precision).abs(),
        recall_deviation: (decomposition.recall - direct_recall).abs(),
        decomposition,
        direct_precision,
        direct_recall,
    })
}

/// One diversity-bound verification on a geometric instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityBoundReport {
    pub epsilon: f64,
    pub validity: f64,
    pub diversity: f64,
    pub branching: Vec<usize>,
    /// Per-position tilt z_t = lambda_t v_t / T of the valid conditional.
    pub tilts: Vec<f64>,
    /// Entropy of the valid conditional, from the enumerated distribution.
    pub measured_entropy: f64,
    /// Same entropy assembled step-wise as sum of H_{v_t}(z_t).
    pub chain_entropy: f64,
    pub chain_deviation: f64,
    /// Ceiling from per-position losses at the nominal budget.
    pub per_position_bound: f64,
    /// Coarser ceiling exp(-m c).
    pub coarse_bound: f64,
    /// Per-position ceiling with the budget corrected for finite support;
    /// never below `per_position_bound`, and the inequality actually
    /// guaranteed on a finite vocabulary. This is the bound checked.
    pub finite_support_bound: f64,
    /// diversity minus the finite-support bound.
    pub slack: f64,
    pub violated: bool,
}

/// Verifies the diversity ceiling on a geometric instance at decode
/// temperature `temperature` and invalidity budget `epsilon`.
///
/// Premises are checked, not assumed: same branching factor across each
/// level, valid tokens occupying the top ranks at every valid prefix, and
/// measured validity within the budget. Any failure is reported as a
/// structured refusal rather than a bound violation.
pub fn verify_diversity_bound(
    model: &GeometricConditional,
    temperature: f64,
    epsilon: f64,
    tolerance: f64,
) -> Result<DiversityBoundReport, TheoryError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(TheoryError::BadEpsilon { value: epsilon });
    }
    let valid = model.valid();
    let mut failures = Vec::new();

    let branching = match valid.branching_profile() {
        Ok(profile) => profile.counts,
        Err(violation) => {
            return Err(TheoryError::PremiseViolated {
                failures: vec![violation.to_string()],
            })
        }
    };

    // valid tokens must fill the top ranks at every valid prefix
    let mut stack: Vec<Vec<TokenId>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == valid.depth() {
            continue;
        }
        let g = valid.valid_tokens(&prefix);
        let dist = model.distribution(&prefix)?;
        let top: std::collections::BTreeSet<TokenId> =
            (0..g.len()).filter_map(|rank| dist.token(rank)).collect();
        if !g.iter().all(|t| top.contains(t)) {
            failures.push(format!(
                "valid tokens are not the top {} ranks at prefix {prefix:?}",
                g.len()
            ));
            if failures.len() >= 5 {
                break;
            }
        }
        for t in g {
            let mut next = prefix.clone();
            next.push(t);
            stack.push(next);
        }
    }
    if !failures.is_empty() {
        return Err(TheoryError::PremiseViolated { failures });
    }

    let rule = CutoffRule::no_filter(temperature)?;
    let sd = exact_sequence_distribution(model, &rule, valid, InducedMode::Renormalized)?;
    let validity = sd.validity(valid);
    if 1.0 - validity > epsilon {
        return Err(TheoryError::PremiseViolated {
            failures: vec![format!(
                "validity {validity} is below the budget 1 - {epsilon}"
            )],
        });
    }
    let diversity = sd.diversity(valid)?;
    let measured_entropy = diversity.ln() + (valid.total() as f64).ln();

    let geometric = model.model();
    let mut tilts = Vec::with_capacity(branching.len());
    let mut chain_entropy = 0.0;
    let mut corrected_loss = 0.0;
    let vocab = geometric.vocab_size() as f64;
    for (t, &v) in branching.iter().enumerate() {
        // decode temperature stacks on whatever the base model carries
        let rate = geometric.lambda(t) / (geometric.temperature() * temperature);
        let z = rate * v as f64;
        chain_entropy += tilted_entropy(z, v)?;
        tilts.push(z);
        // finite support weakens the per-step budget: the escape mass the
        // premise controls excludes what the vocabulary end already cut off
        let q_pow_w = (-rate * vocab).exp();
        let budget = (-(epsilon + (1.0 - epsilon) * q_pow_w).ln()).max(0.0);
        corrected_loss += entropy_loss(budget, v)?;
    }
    let chain_deviation = (chain_entropy - measured_entropy).abs();

    let nominal = diversity_bound(&TradeoffParams {
        epsilon,
        branching: branching.clone(),
    })?;
    let finite_support_bound = (-corrected_loss).exp();
    let slack = diversity - finite_support_bound;
    Ok(DiversityBoundReport {
        epsilon,
        validity,
        diversity,
        branching,
        tilts,
        measured_entropy,
        chain_entropy,
        chain_deviation,
        per_position_bound: nominal.per_position,
        coarse_bound: nominal.coarse,
        finite_support_bound,
        slack,
        violated: slack > tolerance,
    })
}
