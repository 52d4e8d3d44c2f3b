//! Closed-form limits on diversity and recall under truncation.
//!
//! The central quantity is the tilted entropy H_v(a): the entropy of the
//! distribution p_i proportional to exp(-a i / v) over i in 0..v. It is the
//! largest entropy a v-way branching step can have once its tail token is
//! pinned at exp(-a) of the head, and ln v minus it (`entropy_loss`) is the
//! entropy a validity constraint forces that step to give up.
//!
//! Two bounds are built from it. `diversity_bound` multiplies per-step
//! losses into a ceiling on sequence-level diversity at a given invalidity
//! budget. `recall_bound` is the compounding limit for hard steps: when m
//! steps each charge at least rho recall for eta-precise behavior, any
//! policy with overall imprecision delta keeps at most
//! exp(-rho (m - ln(1/(1-delta))/eta)) of the valid set.
//!
//! Everything here is checked empirically by the suites in
//! [`suites`]: exhaustive policy enumeration for the recall bound,
//! randomized instance generation for the diversity bound.

mod bound_checks;
mod hardness;
pub mod suites;

pub use bound_checks::{
    verify_decomposition, verify_diversity_bound, DecompositionReport, DiversityBoundReport,
};
pub use hardness::{measure_hardness, verify_recall_bound, MeasuredHardness, RecallBoundCheck};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutoff::CutoffError;
use crate::enumerate::EnumerateError;
use crate::metrics::MetricsError;
use crate::ranked_dist::DistributionError;

/// Stand-in slope for steps where eta-precision is outright impossible.
pub const RHO_CAP: f64 = 1e6;

/// Hardness measurements below this are treated as zero.
pub const HARDNESS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("epsilon must lie strictly inside (0, 1), got {value}")]
    BadEpsilon { value: f64 },
    #[error("eta must be positive and finite, got {value}")]
    BadEta { value: f64 },
    #[error("delta must lie in [0, 1], got {value}")]
    BadDelta { value: f64 },
    #[error("rho must be nonnegative, got {value}")]
    BadRho { value: f64 },
    #[error("tilt must be nonnegative and finite, got {value}")]
    BadTilt { value: f64 },
    #[error("branching factors must cover at least one position")]
    EmptyBranching,
    #[error("branching factor {value} at position {position} is not >= 1")]
    BadBranching { position: usize, value: usize },
    #[error("vocabulary must allow at least a binary split, got {vocab}")]
    BadVocab { vocab: usize },
    #[error("instance premises do not hold: {}", failures.join("; "))]
    PremiseViolated { failures: Vec<String> },
    #[error("policy space has {count} members, cap is {cap}")]
    TooManyPolicies { count: u128, cap: u128 },
    #[error("no suite named {0:?}; expected decomposition, thm1, thm2 or delta_regimes")]
    UnknownSuite(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Enumerate(#[from] EnumerateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Cutoff(#[from] CutoffError),
}

/// Entropy of p_i proportional to exp(-a i / v) on i in 0..v, in nats.
///
/// With theta = a/v this is ln Z + theta E[i], where
/// Z = expm1(-theta v)/expm1(-theta) and
/// E[i] = 1/expm1(theta) - v/expm1(theta v); the expm1 forms stay accurate
/// for both tiny and large tilts. a = 0 gives ln v, a -> inf gives 0.
pub fn tilted_entropy(a: f64, v: usize) -> Result<f64, TheoryError> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(TheoryError::BadTilt { value: a });
    }
    if v == 0 {
        return Err(TheoryError::BadBranching {
            position: 0,
            value: v,
        });
    }
    if v == 1 {
        return Ok(0.0);
    }
    if a == 0.0 {
        return Ok((v as f64).ln());
    }
    let v_f = v as f64;
    let theta = a / v_f;
    let z = f64::exp_m1(-theta * v_f) / f64::exp_m1(-theta);
    let mean = 1.0 / f64::exp_m1(theta) - v_f / f64::exp_m1(theta * v_f);
    Ok(z.ln() + theta * mean)
}

/// Entropy a v-way step loses under tilt a: ln v - H_v(a), clamped at zero
/// against rounding.
pub fn entropy_loss(a: f64, v: usize) -> Result<f64, TheoryError> {
    let h = tilted_entropy(a, v)?;
    Ok(((v as f64).ln() - h).max(0.0))
}

/// The smallest per-step entropy loss any branching factor up to `vocab`
/// can get away with at invalidity budget epsilon: min over v >= 2 of
/// ln v - H_v(ln(1/epsilon)).
pub fn min_entropy_loss(epsilon: f64, vocab: usize) -> Result<f64, TheoryError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(TheoryError::BadEpsilon { value: epsilon });
    }
    if vocab < 2 {
        return Err(TheoryError::BadVocab { vocab });
    }
    let l = -epsilon.ln();
    let mut best = f64::INFINITY;
    for v in 2..=vocab {
        best = best.min(entropy_loss(l, v)?);
    }
    Ok(best)
}

/// Inputs for the validity/diversity tradeoff bound: the invalidity budget
/// and the per-position branching factors of the valid set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffParams {
    pub epsilon: f64,
    pub branching: Vec<usize>,
}

/// Diversity ceilings at a given invalidity budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityBound {
    /// exp of minus the summed per-position entropy losses.
    pub per_position: f64,
    /// exp(-m c): branching positions times the cheapest possible loss.
    pub coarse: f64,
    /// The cheapest per-step loss c entering the coarse bound.
    pub min_loss: f64,
    /// Number of positions with at least two valid continuations.
    pub branching_length: usize,
}

/// Upper bounds on diversity for any distribution with validity at least
/// 1 - epsilon over a set with the given branching profile. The
/// per-position form is always at least as tight as the coarse form.
pub fn diversity_bound(params: &TradeoffParams) -> Result<DiversityBound, TheoryError> {
    if !(params.epsilon > 0.0 && params.epsilon < 1.0) {
        return Err(TheoryError::BadEpsilon {
            value: params.epsilon,
        });
    }
    if params.branching.is_empty() {
        return Err(TheoryError::EmptyBranching);
    }
    for (position, &v) in params.branching.iter().enumerate() {
        if v == 0 {
            return Err(TheoryError::BadBranching { position, value: v });
        }
    }
    let l = -params.epsilon.ln();
    let mut loss_sum = 0.0;
    for &v in &params.branching {
        loss_sum += entropy_loss(l, v)?;
    }
    let branching_length = params.branching.iter().filter(|&&v| v >= 2).count();
    let vmax = params.branching.iter().copied().max().unwrap();
    let (min_loss, coarse) = if branching_length == 0 {
        (0.0, 1.0)
    } else {
        let c = min_entropy_loss(params.epsilon, vmax)?;
        (c, (-(branching_length as f64) * c).exp())
    };
    Ok(DiversityBound {
        per_position: (-loss_sum).exp(),
        coarse,
        min_loss,
        branching_length,
    })
}

/// Inputs for the compounding recall bound: per-step precision allowance
/// eta, per-step recall charge rho, number of hard steps, and the policy's
/// overall imprecision delta = 1 - sequence precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardStepParams {
    pub eta: f64,
    pub rho: f64,
    pub hard_steps: usize,
    pub delta: f64,
}

/// exp(-rho (m - ln(1/(1-delta))/eta)), clamped to 1 when the budget term
/// swallows every hard step. delta = 1 yields an infinite budget and the
/// bound degenerates to 1; an infinite rho is capped at [`RHO_CAP`] so the
/// clamp wins before the product can turn into NaN.
pub fn recall_bound(params: &HardStepParams) -> Result<f64, TheoryError> {
    if !(params.eta.is_finite() && params.eta > 0.0) {
        return Err(TheoryError::BadEta { value: params.eta });
    }
    if !(0.0..=1.0).contains(&params.delta) {
        return Err(TheoryError::BadDelta {
            value: params.delta,
        });
    }
    if params.rho.is_nan() || params.rho < 0.0 {
        return Err(TheoryError::BadRho { value: params.rho });
    }
    let budget = -f64::ln_1p(-params.delta); // ln(1/(1-delta))
    let slack = params.hard_steps as f64 - budget / params.eta;
    if slack <= 0.0 {
        return Ok(1.0);
    }
    Ok((-params.rho.min(RHO_CAP) * slack).exp())
}

#[cfg(test)]
mod tests;
