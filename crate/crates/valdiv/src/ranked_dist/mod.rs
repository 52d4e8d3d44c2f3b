//! Rank-sorted next-token distributions.
//!
//! A ranked distribution stores probabilities in non-increasing rank order,
//! optionally tagged with the token ids that occupy each rank. All ingestion
//! goes through a softmax in log space:
//!
//! ```text
//!   p_i = exp(l_i - max l) / sum_j exp(l_j - max l)
//! ```
//!
//! Temperature acts before any truncation and preserves rank order:
//! p_i^(T) ∝ p_i^(1/T). The geometric ranked model places mass
//! P(i) ∝ exp(-λ i / T) on rank i over a finite vocabulary, i.e. a truncated
//! geometric with ratio q = exp(-λ/T). Entropies are in nats throughout.

mod fit;

pub use fit::{fit_piecewise, PiecewiseLogitFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::TokenId;

/// Tolerance for a probability vector to count as normalized on input.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DistributionError {
    #[error("empty input")]
    Empty,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("probability {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities not sorted non-increasingly at index {index}")]
    NotSorted { index: usize },
    #[error("probabilities sum to {sum}, expected 1 within {MASS_TOLERANCE}")]
    BadMass { sum: f64 },
    #[error("temperature must be positive and finite, got {value}")]
    BadTemperature { value: f64 },
    #[error("token list length {tokens} does not match {ranks} ranks")]
    TokenLengthMismatch { tokens: usize, ranks: usize },
    #[error("duplicate token id {token}")]
    DuplicateToken { token: TokenId },
    #[error("sharpness must be positive and finite, got {value}")]
    BadSharpness { value: f64 },
    #[error("position {position} out of range for {positions} positions")]
    PositionOutOfRange { position: usize, positions: usize },
    #[error("need at least {needed} logits to fit both pieces, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

/// Probabilities sorted non-increasingly by rank, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDistribution {
    probs: Vec<f64>,
    tokens: Option<Vec<TokenId>>,
}

impl RankedDistribution {
    /// Builds from an already rank-sorted probability vector.
    ///
    /// The sum may deviate from one by at most [`MASS_TOLERANCE`]; the stored
    /// vector is rescaled to sum to one exactly.
    pub fn from_probs(
        probs: Vec<f64>,
        tokens: Option<Vec<TokenId>>,
    ) -> Result<Self, DistributionError> {
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(DistributionError::NonFinite { index: i, value: p });
            }
            if !(0.0..=1.0 + MASS_TOLERANCE).contains(&p) {
                return Err(DistributionError::OutOfRange { index: i, value: p });
            }
            if i > 0 && p > probs[i - 1] {
                return Err(DistributionError::NotSorted { index: i });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistributionError::BadMass { sum });
        }
        let probs = probs.into_iter().map(|p| p / sum).collect();
        let dist = Self {
            probs,
            tokens: None,
        };
        match tokens {
            Some(t) => dist.with_tokens(t),
            None => Ok(dist),
        }
    }

    /// Softmax over raw logits, sorted by descending probability.
    ///
    /// Token identities are the original indices; ties keep the original
    /// index order, so equal logits rank by ascending index.
    pub fn from_logits(logits: &[f64]) -> Result<Self, DistributionError> {
        let scored: Vec<(TokenId, f64)> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| (i as TokenId, l))
            .collect();
        Self::from_scored_tokens(&scored)
    }

    /// Softmax over (token, logit) pairs, sorted by descending probability.
    ///
    /// Ties keep the order the pairs were given in.
    pub fn from_scored_tokens(scored: &[(TokenId, f64)]) -> Result<Self, DistributionError> {
        if scored.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (i, &(_, l)) in scored.iter().enumerate() {
            if !l.is_finite() {
                return Err(DistributionError::NonFinite { index: i, value: l });
            }
        }
        let mut order: Vec<usize> = (0..scored.len()).collect();
        // stable sort: equal logits keep ascending input order
        order.sort_by(|&a, &b| scored[b].1.partial_cmp(&scored[a].1).unwrap());
        let max = scored[order[0]].1;
        let weights: Vec<f64> = order.iter().map(|&i| (scored[i].1 - max).exp()).collect();
        let sum: f64 = weights.iter().sum();
        let probs = weights.into_iter().map(|w| w / sum).collect();
        let tokens = order.iter().map(|&i| scored[i].0).collect();
        let dist = Self {
            probs,
            tokens: None,
        };
        dist.with_tokens(tokens)
    }

    /// Uniform distribution over `n` ranks with identity token ids.
    pub fn uniform(n: usize) -> Result<Self, DistributionError> {
        if n == 0 {
            return Err(DistributionError::Empty);
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
            tokens: Some((0..n as TokenId).collect()),
        })
    }

    /// Attaches token identities (one per rank, no duplicates).
    pub fn with_tokens(self, tokens: Vec<TokenId>) -> Result<Self, DistributionError> {
        if tokens.len() != self.probs.len() {
            return Err(DistributionError::TokenLengthMismatch {
                tokens: tokens.len(),
                ranks: self.probs.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for &t in &tokens {
            if !seen.insert(t) {
                return Err(DistributionError::DuplicateToken { token: t });
            }
        }
        Ok(Self {
            probs: self.probs,
            tokens: Some(tokens),
        })
    }

    /// Rescales with temperature `T`: p_i ∝ p_i^(1/T). Zero entries stay zero,
    /// rank order is preserved, `T = 1` is the exact identity.
    pub fn temperature_scale(&self, temperature: f64) -> Result<Self, DistributionError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(DistributionError::BadTemperature { value: temperature });
        }
        if temperature == 1.0 {
            return Ok(self.clone());
        }
        // exp((ln p - ln p_max)/T); ln 0 = -inf maps back to exactly 0
        let lmax = self.probs[0].ln();
        let weights: Vec<f64> = self
            .probs
            .iter()
            .map(|&p| {
                if p == 0.0 {
                    0.0
                } else {
                    ((p.ln() - lmax) / temperature).exp()
                }
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
            tokens: self.tokens.clone(),
        })
    }

    /// Shannon entropy in nats, with 0 ln 0 = 0.
    pub fn entropy(&self) -> f64 {
        entropy_nats(&self.probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, rank: usize) -> f64 {
        self.probs[rank]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Token occupying `rank`, if identities are attached.
    pub fn token(&self, rank: usize) -> Option<TokenId> {
        self.tokens.as_ref().map(|t| t[rank])
    }

    pub fn tokens(&self) -> Option<&[TokenId]> {
        self.tokens.as_deref()
    }

    /// Rank of `token`, if identities are attached and the token is present.
    pub fn rank_of(&self, token: TokenId) -> Option<usize> {
        self.tokens.as_ref()?.iter().position(|&t| t == token)
    }
}

/// Shannon entropy of a probability slice in nats, with 0 ln 0 = 0.
pub fn entropy_nats(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Raw logit scores indexed by rank.
///
/// `from_scores` sorts descending (the usual ingestion path); `from_ranked`
/// keeps the given order for inputs that are already rank-indexed, including
/// synthetic rank curves that are not monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    /// Sorts scores descending and stores them by rank.
    pub fn from_scores(mut scores: Vec<f64>) -> Result<Self, DistributionError> {
        check_finite(&scores)?;
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(Self { values: scores })
    }

    /// Stores already rank-indexed values as given.
    pub fn from_ranked(values: Vec<f64>) -> Result<Self, DistributionError> {
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Softmax at temperature `T`: p_i ∝ exp(l_i / T).
    pub fn at_temperature(
        &self,
        temperature: f64,
    ) -> Result<RankedDistribution, DistributionError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(DistributionError::BadTemperature { value: temperature });
        }
        let scaled: Vec<f64> = self.values.iter().map(|&l| l / temperature).collect();
        RankedDistribution::from_logits(&scaled)
    }
}

fn check_finite(values: &[f64]) -> Result<(), DistributionError> {
    if values.is_empty() {
        return Err(DistributionError::Empty);
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(DistributionError::NonFinite { index: i, value: v });
        }
    }
    Ok(())
}

/// Geometric ranked model: at position t, rank i carries mass
/// P(i) ∝ exp(-λ_t i / T) over a finite vocabulary.
///
/// The ratio between consecutive ranks is q_t = exp(-λ_t / T); normalization
/// is over the finite vocabulary, so the top-v head mass is
/// (1 - q^v) / (1 - q^|vocab|) rather than the infinite-support 1 - q^v.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricRankedModel {
    lambdas: Vec<f64>,
    temperature: f64,
    vocab_size: usize,
}

impl GeometricRankedModel {
    /// `lambdas` holds one sharpness per sequence position.
    pub fn new(
        lambdas: Vec<f64>,
        temperature: f64,
        vocab_size: usize,
    ) -> Result<Self, DistributionError> {
        if lambdas.is_empty() || vocab_size == 0 {
            return Err(DistributionError::Empty);
        }
        for &l in &lambdas {
            if !(l.is_finite() && l > 0.0) {
                return Err(DistributionError::BadSharpness { value: l });
            }
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(DistributionError::BadTemperature { value: temperature });
        }
        Ok(Self {
            lambdas,
            temperature,
            vocab_size,
        })
    }

    /// Same sharpness at every position.
    pub fn constant(
        lambda: f64,
        positions: usize,
        temperature: f64,
        vocab_size: usize,
    ) -> Result<Self, DistributionError> {
        Self::new(vec![lambda; positions], temperature, vocab_size)
    }

    pub fn positions(&self) -> usize {
        self.lambdas.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn lambda(&self, position: usize) -> f64 {
        self.lambdas[position]
    }

    /// Decay ratio q_t = exp(-λ_t / T) at `position`.
    pub fn ratio(&self, position: usize) -> f64 {
        (-self.lambdas[position] / self.temperature).exp()
    }

    /// Ranked distribution at `position` (0-based), token ids = ranks.
    pub fn distribution(&self, position: usize) -> Result<RankedDistribution, DistributionError> {
        if position >= self.lambdas.len() {
            return Err(DistributionError::PositionOutOfRange {
                position,
                positions: self.lambdas.len(),
            });
        }
        let theta = self.lambdas[position] / self.temperature;
        let logits: Vec<f64> = (0..self.vocab_size).map(|i| -theta * i as f64).collect();
        RankedDistribution::from_logits(&logits)
    }

    /// Copy of the model at a different temperature.
    pub fn at_temperature(&self, temperature: f64) -> Result<Self, DistributionError> {
        Self::new(self.lambdas.clone(), temperature, self.vocab_size)
    }
}

#[cfg(test)]
mod tests;
