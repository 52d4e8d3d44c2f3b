//! Validity, diversity, and the precision/recall family.
//!
//! Sequence-level quantities are defined against a [`ValidSet`] V:
//!
//! * validity: probability mass a sequence distribution puts on V,
//! * diversity: exp(H(Y | Y in V)) / |V|, the perplexity of the conditional
//!   distribution over valid sequences as a fraction of |V|,
//! * sequence precision: probability that sampling uniformly from the
//!   retained set at every step lands in V,
//! * sequence recall: fraction of V reachable when every step's token
//!   survives truncation.
//!
//! Precision and recall both factor exactly into per-step terms
//! (`decomposition_factors`); the identities `prod(alpha) = precision` and
//! `prod(beta) = recall` hold up to float rounding and are enforced by the
//! verification suites. Step-local precision/recall and the two calibration
//! probes operate on a single ranked distribution at one prefix.

mod text;

pub use text::{bleu_score, embedding_diversity, self_bleu};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutoff::CutoffError;
use crate::ranked_dist::{entropy_nats, RankedDistribution};
use crate::valid_set::ValidSet;
use crate::TokenId;

/// Sequence probabilities must account for all mass within this slack.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequence {index} has length {got}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("probability for sequence {index} is {value}, not in [0, 1]")]
    BadProbability { index: usize, value: f64 },
    #[error("total mass {total} is not 1 within {MASS_TOLERANCE}")]
    BadMass { total: f64 },
    #[error("no probability mass on valid sequences")]
    NoValidMass,
    #[error("prefix {prefix:?} has no valid continuations")]
    InvalidPrefix { prefix: Vec<TokenId> },
    #[error("policy does not cover prefix {prefix:?}")]
    PrefixNotCovered { prefix: Vec<TokenId> },
    #[error("policy failed at prefix {prefix:?}: {detail}")]
    PolicyFailure {
        prefix: Vec<TokenId>,
        detail: String,
    },
    #[error("retained token set is empty")]
    EmptyTokenSet,
    #[error("distribution has no token identities")]
    NeedsTokenIds,
    #[error("need at least {needed} sequences, got {got}")]
    TooFewSequences { needed: usize, got: usize },
    #[error("embedding {index} has zero norm")]
    ZeroVector { index: usize },
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Cutoff(#[from] CutoffError),
}

/// A distribution over fixed-length sequences: explicit per-sequence
/// probabilities plus one aggregate bucket for mass on sequences that were
/// never enumerated (all of it invalid by construction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceDistribution {
    probs: BTreeMap<Vec<TokenId>, f64>,
    invalid_mass: f64,
    depth: usize,
}

impl SequenceDistribution {
    pub fn new(
        probs: BTreeMap<Vec<TokenId>, f64>,
        invalid_mass: f64,
        depth: usize,
    ) -> Result<Self, MetricsError> {
        for (index, (seq, &p)) in probs.iter().enumerate() {
            if seq.len() != depth {
                return Err(MetricsError::LengthMismatch {
                    index,
                    expected: depth,
                    got: seq.len(),
                });
            }
            if !(p.is_finite() && (0.0..=1.0 + MASS_TOLERANCE).contains(&p)) {
                return Err(MetricsError::BadProbability { index, value: p });
            }
        }
        if !(invalid_mass.is_finite() && invalid_mass >= -MASS_TOLERANCE) {
            return Err(MetricsError::BadProbability {
                index: usize::MAX,
                value: invalid_mass,
            });
        }
        let total = probs.values().sum::<f64>() + invalid_mass;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(MetricsError::BadMass { total });
        }
        Ok(Self {
            probs,
            invalid_mass: invalid_mass.max(0.0),
            depth,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn probs(&self) -> &BTreeMap<Vec<TokenId>, f64> {
        &self.probs
    }

    pub fn prob(&self, seq: &[TokenId]) -> f64 {
        self.probs.get(seq).copied().unwrap_or(0.0)
    }

    /// Mass on sequences outside the explicit support.
    pub fn unlisted_invalid_mass(&self) -> f64 {
        self.invalid_mass
    }

    /// Val: total mass on members of V.
    pub fn validity(&self, valid: &ValidSet) -> f64 {
        self.probs
            .iter()
            .filter(|(seq, _)| valid.contains(seq))
            .map(|(_, &p)| p)
            .sum()
    }

    /// Div: exp(entropy of the distribution conditioned on V) / |V|.
    /// Errors when validity is zero, where the conditional is undefined.
    pub fn diversity(&self, valid: &ValidSet) -> Result<f64, MetricsError> {
        let val = self.validity(valid);
        if val <= 0.0 {
            return Err(MetricsError::NoValidMass);
        }
        let conditional: Vec<f64> = self
            .probs
            .iter()
            .filter(|(seq, &p)| p > 0.0 && valid.contains(seq))
            .map(|(_, &p)| p / val)
            .collect();
        Ok(entropy_nats(&conditional).exp() / valid.total() as f64)
    }
}

/// Fraction of retained tokens that are valid continuations: |S n G| / |S|.
pub fn local_precision(
    retained: &BTreeSet<TokenId>,
    valid: &ValidSet,
    prefix: &[TokenId],
) -> Result<f64, MetricsError> {
    if retained.is_empty() {
        return Err(MetricsError::EmptyTokenSet);
    }
    let g: BTreeSet<TokenId> = valid.valid_tokens(prefix).into_iter().collect();
    if g.is_empty() {
        return Err(MetricsError::InvalidPrefix {
            prefix: prefix.to_vec(),
        });
    }
    Ok(retained.intersection(&g).count() as f64 / retained.len() as f64)
}

/// Fraction of valid continuations surviving the step, weighted by how many
/// full sequences pass through each token: sum over S n G of N(prefix.v)
/// over N(prefix).
pub fn local_recall(
    retained: &BTreeSet<TokenId>,
    valid: &ValidSet,
    prefix: &[TokenId],
) -> Result<f64, MetricsError> {
    if retained.is_empty() {
        return Err(MetricsError::EmptyTokenSet);
    }
    let denom = valid.continuation_count(prefix);
    if denom == 0 {
        return Err(MetricsError::InvalidPrefix {
            prefix: prefix.to_vec(),
        });
    }
    let kept: u64 = valid
        .valid_tokens(prefix)
        .into_iter()
        .filter(|t| retained.contains(t))
        .map(|t| {
            let mut p = prefix.to_vec();
            p.push(t);
            valid.continuation_count(&p)
        })
        .sum();
    Ok(kept as f64 / denom as f64)
}

/// Step-wise truncation policy: which token set survives at a prefix.
/// Only ever consulted at valid prefixes.
pub trait Policy {
    fn retained(&self, prefix: &[TokenId]) -> Result<BTreeSet<TokenId>, MetricsError>;
}

/// Policy backed by an explicit prefix-to-set table.
#[derive(Debug, Clone, Default)]
pub struct MapPolicy {
    sets: BTreeMap<Vec<TokenId>, BTreeSet<TokenId>>,
}

impl MapPolicy {
    pub fn new(sets: BTreeMap<Vec<TokenId>, BTreeSet<TokenId>>) -> Self {
        Self { sets }
    }

    pub fn insert(&mut self, prefix: Vec<TokenId>, retained: BTreeSet<TokenId>) {
        self.sets.insert(prefix, retained);
    }
}

impl Policy for MapPolicy {
    fn retained(&self, prefix: &[TokenId]) -> Result<BTreeSet<TokenId>, MetricsError> {
        self.sets
            .get(prefix)
            .cloned()
            .ok_or_else(|| MetricsError::PrefixNotCovered {
                prefix: prefix.to_vec(),
            })
    }
}

/// Probability that stepping uniformly over each retained set yields a
/// member of V. Walks only valid prefixes: any path leaving V contributes
/// nothing.
pub fn sequence_precision(policy: &dyn Policy, valid: &ValidSet) -> Result<f64, MetricsError> {
    fn walk(
        policy: &dyn Policy,
        valid: &ValidSet,
        node: usize,
        prefix: &mut Vec<TokenId>,
        weight: f64,
        depth_left: usize,
    ) -> Result<f64, MetricsError> {
        if depth_left == 0 {
            return Ok(weight);
        }
        let retained = policy.retained(prefix)?;
        if retained.is_empty() {
            return Err(MetricsError::EmptyTokenSet);
        }
        let step = 1.0 / retained.len() as f64;
        let mut total = 0.0;
        for (tok, child) in valid.node_children(node) {
            if retained.contains(&tok) {
                prefix.push(tok);
                total += walk(policy, valid, child, prefix, weight * step, depth_left - 1)?;
                prefix.pop();
            }
        }
        Ok(total)
    }
    walk(
        policy,
        valid,
        valid.root(),
        &mut Vec::new(),
        1.0,
        valid.depth(),
    )
}

/// Fraction of V whose every token survives truncation along its own path.
pub fn sequence_recall(policy: &dyn Policy, valid: &ValidSet) -> Result<f64, MetricsError> {
    fn surviving(
        policy: &dyn Policy,
        valid: &ValidSet,
        node: usize,
        prefix: &mut Vec<TokenId>,
        depth_left: usize,
    ) -> Result<u64, MetricsError> {
        if depth_left == 0 {
            return Ok(valid.node_count(node));
        }
        let retained = policy.retained(prefix)?;
        let mut total = 0;
        for (tok, child) in valid.node_children(node) {
            if retained.contains(&tok) {
                prefix.push(tok);
                total += surviving(policy, valid, child, prefix, depth_left - 1)?;
                prefix.pop();
            }
        }
        Ok(total)
    }
    let kept = surviving(policy, valid, valid.root(), &mut Vec::new(), valid.depth())?;
    Ok(kept as f64 / valid.total() as f64)
}

/// Exact per-step factorization of sequence precision and recall.
///
/// `alphas[t]` is the conditional probability, under uniform-over-retained
/// stepping restricted to paths still inside V, that step t+1 stays inside;
/// `betas[t]` is the fraction of still-reachable valid sequences surviving
/// step t+1. If some level retains nothing valid, both factors record a
/// final zero and `truncated_at` marks the level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub truncated_at: Option<usize>,
}

pub fn decomposition_factors(
    policy: &dyn Policy,
    valid: &ValidSet,
) -> Result<Decomposition, MetricsError> {
    // frontier of surviving valid prefixes: (node, uniform-path weight)
    let mut frontier: Vec<(usize, Vec<TokenId>, f64)> = vec![(valid.root(), Vec::new(), 1.0)];
    let mut weight_sum = 1.0;
    let mut count_sum = valid.total() as f64;
    let mut alphas = Vec::with_capacity(valid.depth());
    let mut betas = Vec::with_capacity(valid.depth());
    let mut truncated_at = None;

    for level in 0..valid.depth() {
        let mut next = Vec::new();
        let mut next_weight = 0.0;
        let mut next_count = 0.0;
        for (node, prefix, weight) in &frontier {
            let retained = policy.retained(prefix)?;
            if retained.is_empty() {
                return Err(MetricsError::EmptyTokenSet);
            }
            let step = 1.0 / retained.len() as f64;
            for (tok, child) in valid.node_children(*node) {
                if retained.contains(&tok) {
                    let mut p = prefix.clone();
                    p.push(tok);
                    next_weight += weight * step;
                    next_count += valid.node_count(child) as f64;
                    next.push((child, p, weight * step));
                }
            }
        }
        alphas.push(next_weight / weight_sum);
        betas.push(next_count / count_sum);
        if next.is_empty() {
            truncated_at = Some(level);
            break;
        }
        frontier = next;
        weight_sum = next_weight;
        count_sum = next_count;
    }

    let precision = alphas.iter().product();
    let recall = betas.iter().product();
    Ok(Decomposition {
        alphas,
        betas,
        precision,
        recall,
        truncated_at,
    })
}

/// Valid/invalid token pairs that violate ordering at one step: a valid
/// token strictly less probable than an invalid one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCalibration {
    pub violations: Vec<(TokenId, TokenId)>,
}

impl OrderCalibration {
    pub fn is_calibrated(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every valid token outranks every invalid one at `prefix`.
pub fn order_calibration_check(
    dist: &RankedDistribution,
    valid: &ValidSet,
    prefix: &[TokenId],
) -> Result<OrderCalibration, MetricsError> {
    if dist.tokens().is_none() {
        return Err(MetricsError::NeedsTokenIds);
    }
    let g: BTreeSet<TokenId> = valid.valid_tokens(prefix).into_iter().collect();
    if g.is_empty() {
        return Err(MetricsError::InvalidPrefix {
            prefix: prefix.to_vec(),
        });
    }
    let mut violations = Vec::new();
    for v_rank in 0..dist.len() {
        let v = dist.token(v_rank).unwrap();
        if !g.contains(&v) {
            continue;
        }
        for w_rank in 0..dist.len() {
            let w = dist.token(w_rank).unwrap();
            if !g.contains(&w) && dist.prob(v_rank) < dist.prob(w_rank) {
                violations.push((v, w));
            }
        }
    }
    Ok(OrderCalibration { violations })
}

/// Total-variation distance between the model's conditional over valid
/// next tokens and the continuation-count-proportional target.
pub fn shape_calibration_deviation(
    dist: &RankedDistribution,
    valid: &ValidSet,
    prefix: &[TokenId],
) -> Result<f64, MetricsError> {
    if dist.tokens().is_none() {
        return Err(MetricsError::NeedsTokenIds);
    }
    let denom = valid.continuation_count(prefix);
    if denom == 0 {
        return Err(MetricsError::InvalidPrefix {
            prefix: prefix.to_vec(),
        });
    }
    let g = valid.valid_tokens(prefix);
    let mut model: BTreeMap<TokenId, f64> = g.iter().map(|&t| (t, 0.0)).collect();
    let mut valid_mass = 0.0;
    for rank in 0..dist.len() {
        let tok = dist.token(rank).unwrap();
        if let Some(slot) = model.get_mut(&tok) {
            *slot = dist.prob(rank);
            valid_mass += dist.prob(rank);
        }
    }
    if valid_mass <= 0.0 {
        return Err(MetricsError::NoValidMass);
    }
    let mut tv = 0.0;
    for &t in &g {
        let mut p = prefix.to_vec();
        p.push(t);
        let target = valid.continuation_count(&p) as f64 / denom as f64;
        tv += (model[&t] / valid_mass - target).abs();
    }
    Ok(tv / 2.0)
}
