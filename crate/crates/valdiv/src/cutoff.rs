//! Truncation rules over ranked next-token distributions.
//!
//! A rule is applied after temperature scaling: scale first, then decide
//! which ranks survive. Rank-based rules (top-k, top-p, min-p, fixed index,
//! no filter) always keep a contiguous prefix of ranks. The two oracle rules
//! consult a [`ValidSet`]: oracle-size keeps the top |G(prefix)| ranks,
//! oracle-validity keeps exactly the ranks whose token is in G(prefix) and
//! may leave gaps. An optional step window turns the oracle rules off
//! outside it, falling back to no filtering.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranked_dist::{DistributionError, RankedDistribution};
use crate::valid_set::ValidSet;
use crate::TokenId;

/// Cumulative mass within this slack of the nominal top-p threshold counts
/// as reaching it, so sums like 0.5 + 0.3 still close a 0.8 boundary.
pub const TOP_P_TOLERANCE: f64 = 1e-9;

/// Probabilities within this slack of the min-p floor are kept.
pub const MIN_P_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CutoffError {
    #[error("top-k needs k >= 1")]
    BadTopK,
    #[error("top-p needs p in (0, 1], got {value}")]
    BadTopP { value: f64 },
    #[error("min-p needs a floor ratio in (0, 1], got {value}")]
    BadMinP { value: f64 },
    #[error("{rule} requires a valid-set oracle")]
    NeedsOracle { rule: &'static str },
    #[error("oracle-validity requires token identities on the distribution")]
    NeedsTokenIds,
    #[error("prefix {prefix:?} has no valid continuations")]
    InvalidPrefix { prefix: Vec<TokenId> },
    #[error("{rule} retained no tokens")]
    EmptyRetained { rule: &'static str },
    #[error("retained set carries zero probability mass")]
    ZeroMassRetained,
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// The truncation decision itself, before temperature and step windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffVariant {
    TopK(usize),
    TopP(f64),
    MinP(f64),
    /// Keep ranks 0..=i.
    FixedIndex(usize),
    /// Keep the |G(prefix)| highest-probability ranks.
    OracleSize,
    /// Keep exactly the ranks whose token is valid.
    OracleValidity,
    NoFilter,
}

impl CutoffVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TopK(_) => "top_k",
            Self::TopP(_) => "top_p",
            Self::MinP(_) => "min_p",
            Self::FixedIndex(_) => "fixed_index",
            Self::OracleSize => "oracle_size",
            Self::OracleValidity => "oracle_validity",
            Self::NoFilter => "none",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match self {
            Self::TopK(k) => Some(*k as f64),
            Self::TopP(p) | Self::MinP(p) => Some(*p),
            Self::FixedIndex(i) => Some(*i as f64),
            _ => None,
        }
    }
}

/// A truncation rule plus the temperature it runs at and an optional
/// half-open step window outside which oracle rules stop filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleSpec", into = "RuleSpec")]
pub struct CutoffRule {
    variant: CutoffVariant,
    temperature: f64,
    oracle_steps: Option<(usize, usize)>,
}

impl CutoffRule {
    pub fn new(variant: CutoffVariant, temperature: f64) -> Result<Self, CutoffError> {
        match variant {
            CutoffVariant::TopK(0) => return Err(CutoffError::BadTopK),
            CutoffVariant::TopP(p) if !(p > 0.0 && p <= 1.0) => {
                return Err(CutoffError::BadTopP { value: p })
            }
            CutoffVariant::MinP(p) if !(p > 0.0 && p <= 1.0) => {
                return Err(CutoffError::BadMinP { value: p })
            }
            _ => {}
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(DistributionError::BadTemperature { value: temperature }.into());
        }
        Ok(Self {
            variant,
            temperature,
            oracle_steps: None,
        })
    }

    pub fn top_k(k: usize, temperature: f64) -> Result<Self, CutoffError> {
        Self::new(CutoffVariant::TopK(k), temperature)
    }

    pub fn top_p(p: f64, temperature: f64) -> Result<Self, CutoffError> {
        Self::new(CutoffVariant::TopP(p), temperature)
    }

    pub fn min_p(p: f64, temperature: f64) -> Result<Self, CutoffError> {
        Self::new(CutoffVariant::MinP(p), temperature)
    }

    pub fn fixed_index(i: usize, temperature: f64) -> Result<Self, CutoffError> {
        Self::new(CutoffVariant::FixedIndex(i), temperature)
    }

    pub fn oracle_size(temperature: f64) -> Result<Self, CutoffError> {
        Self::new(CutoffVariant::OracleSize, temperature)
    }

    pub fn oracle_validity(temperature: f64) -> Result<Self, CutoffError> {
        Self::new(CutoffVariant::OracleValidity, temperature)
    }

    pub fn no_filter(temperature: f64) -> Result<Self, CutoffError> {
        Self::new(CutoffVariant::NoFilter, temperature)
    }

    /// Restricts oracle filtering to steps in [start, end).
    pub fn with_oracle_steps(mut self, start: usize, end: usize) -> Self {
        self.oracle_steps = Some((start, end));
        self
    }

    pub fn variant(&self) -> &CutoffVariant {
        &self.variant
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn oracle_steps(&self) -> Option<(usize, usize)> {
        self.oracle_steps
    }

    pub fn name(&self) -> &'static str {
        self.variant.name()
    }

    pub fn param(&self) -> Option<f64> {
        self.variant.param()
    }

    /// The variant actually applied at `step`: oracle rules outside their
    /// window degrade to no filtering.
    pub fn variant_at_step(&self, step: usize) -> CutoffVariant {
        match (self.variant, self.oracle_steps) {
            (CutoffVariant::OracleSize | CutoffVariant::OracleValidity, Some((s, e)))
                if step < s || step >= e =>
            {
                CutoffVariant::NoFilter
            }
            (v, _) => v,
        }
    }

    /// Scales by temperature, then truncates. Oracle variants need the
    /// valid set and the current prefix.
    pub fn retain(
        &self,
        dist: &RankedDistribution,
        step: usize,
        oracle: Option<(&ValidSet, &[TokenId])>,
    ) -> Result<RetainedSet, CutoffError> {
        let scaled = dist.temperature_scale(self.temperature)?;
        let n = scaled.len();
        let variant = self.variant_at_step(step);
        let ranks: Vec<usize> = match variant {
            CutoffVariant::TopK(k) => (0..k.min(n)).collect(),
            CutoffVariant::TopP(p) => {
                let mut cum = 0.0;
                let mut keep = Vec::new();
                for rank in 0..n {
                    keep.push(rank);
                    cum += scaled.prob(rank);
                    if cum >= p - TOP_P_TOLERANCE {
                        break;
                    }
                }
                keep
            }
            CutoffVariant::MinP(p) => {
                let floor = p * scaled.prob(0) - MIN_P_TOLERANCE;
                (0..n).take_while(|&r| scaled.prob(r) >= floor).collect()
            }
            CutoffVariant::FixedIndex(i) => (0..=i.min(n - 1)).collect(),
            CutoffVariant::OracleSize => {
                let (vs, prefix) = oracle.ok_or(CutoffError::NeedsOracle {
                    rule: "oracle_size",
                })?;
                let g = vs.valid_tokens(prefix).len();
                if g == 0 {
                    return Err(CutoffError::InvalidPrefix {
                        prefix: prefix.to_vec(),
                    });
                }
                (0..g.min(n)).collect()
            }
            CutoffVariant::OracleValidity => {
                let (vs, prefix) = oracle.ok_or(CutoffError::NeedsOracle {
                    rule: "oracle_validity",
                })?;
                let g: BTreeSet<TokenId> = vs.valid_tokens(prefix).into_iter().collect();
                if g.is_empty() {
                    return Err(CutoffError::InvalidPrefix {
                        prefix: prefix.to_vec(),
                    });
                }
                if scaled.tokens().is_none() {
                    return Err(CutoffError::NeedsTokenIds);
                }
                (0..n)
                    .filter(|&r| g.contains(&scaled.token(r).unwrap()))
                    .collect()
            }
            CutoffVariant::NoFilter => (0..n).collect(),
        };
        if ranks.is_empty() {
            return Err(CutoffError::EmptyRetained {
                rule: variant.name(),
            });
        }
        Ok(RetainedSet {
            ranks,
            dist: scaled,
        })
    }
}

/// How the step distribution over a retained set is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InducedMode {
    /// Each retained token gets 1/|S|.
    Uniform,
    /// Retained probabilities rescaled to sum to one.
    Renormalized,
}

/// Outcome of one truncation: surviving ranks over the temperature-scaled
/// distribution they were selected from.
#[derive(Debug, Clone)]
pub struct RetainedSet {
    ranks: Vec<usize>,
    dist: RankedDistribution,
}

impl RetainedSet {
    /// Surviving ranks, ascending.
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// The temperature-scaled distribution the ranks index into.
    pub fn distribution(&self) -> &RankedDistribution {
        &self.dist
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Total scaled probability over the surviving ranks.
    pub fn retained_mass(&self) -> f64 {
        self.ranks.iter().map(|&r| self.dist.prob(r)).sum()
    }

    /// Surviving token ids; requires token identities.
    pub fn token_set(&self) -> Result<BTreeSet<TokenId>, CutoffError> {
        if self.dist.tokens().is_none() {
            return Err(CutoffError::NeedsTokenIds);
        }
        Ok(self
            .ranks
            .iter()
            .map(|&r| self.dist.token(r).unwrap())
            .collect())
    }

    /// Token sampled at this step, parallel to [`ranks`](Self::ranks).
    pub fn induced(&self, mode: InducedMode) -> Result<Vec<f64>, CutoffError> {
        match mode {
            InducedMode::Uniform => {
                let w = 1.0 / self.ranks.len() as f64;
                Ok(vec![w; self.ranks.len()])
            }
            InducedMode::Renormalized => {
                let mass = self.retained_mass();
                if mass <= 0.0 {
                    return Err(CutoffError::ZeroMassRetained);
                }
                Ok(self
                    .ranks
                    .iter()
                    .map(|&r| self.dist.prob(r) / mass)
                    .collect())
            }
        }
    }
}

/// Wire form of a rule: name, optional scalar parameter, temperature, and
/// the oracle step window.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleSpec {
    rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    param: Option<f64>,
    #[serde(default = "default_temperature")]
    temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oracle_steps: Option<(usize, usize)>,
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Error)]
pub enum RuleSpecError {
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error("rule {rule:?} requires a numeric param")]
    MissingParam { rule: String },
    #[error("rule {rule:?} needs a nonnegative integer param, got {value}")]
    NonIntegerParam { rule: String, value: f64 },
    #[error(transparent)]
    Cutoff(#[from] CutoffError),
}

impl TryFrom<RuleSpec> for CutoffRule {
    type Error = RuleSpecError;

    fn try_from(spec: RuleSpec) -> Result<Self, Self::Error> {
        let need = |p: Option<f64>| {
            p.ok_or_else(|| RuleSpecError::MissingParam {
                rule: spec.rule.clone(),
            })
        };
        let as_index = |value: f64| {
            if value.fract() == 0.0 && value >= 0.0 && value.is_finite() {
                Ok(value as usize)
            } else {
                Err(RuleSpecError::NonIntegerParam {
                    rule: spec.rule.clone(),
                    value,
                })
            }
        };
        let variant = match spec.rule.as_str() {
            "top_k" => CutoffVariant::TopK(as_index(need(spec.param)?)?),
            "top_p" => CutoffVariant::TopP(need(spec.param)?),
            "min_p" => CutoffVariant::MinP(need(spec.param)?),
            "fixed_index" => CutoffVariant::FixedIndex(as_index(need(spec.param)?)?),
            "oracle_size" => CutoffVariant::OracleSize,
            "oracle_validity" => CutoffVariant::OracleValidity,
            "none" => CutoffVariant::NoFilter,
            other => return Err(RuleSpecError::UnknownRule(other.to_string())),
        };
        let mut rule = CutoffRule::new(variant, spec.temperature)?;
        rule.oracle_steps = spec.oracle_steps;
        Ok(rule)
    }
}

impl From<CutoffRule> for RuleSpec {
    fn from(rule: CutoffRule) -> Self {
        Self {
            rule: rule.name().to_string(),
            param: rule.param(),
            temperature: rule.temperature,
            oracle_steps: rule.oracle_steps,
        }
    }
}
