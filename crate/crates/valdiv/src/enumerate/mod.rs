//! Exact enumeration of truncated decoding over small tasks.
//!
//! For tasks whose valid set fits in a trie and whose vocabulary is modest,
//! the full sequence distribution induced by a cutoff rule can be computed
//! exactly: walk the valid prefixes, truncate the model's ranked
//! distribution at each step, and accumulate path products. Mass that steps
//! off the valid trie is lumped into a single invalid bucket since nothing
//! downstream distinguishes one invalid continuation from another.
//!
//! The same machinery drives validity/diversity sweeps over rule grids
//! ([`temperature_frontier`]) and Pareto frontiers over the resulting
//! point clouds.

mod tree;

pub use tree::{
    depth_frontier_summary, local_pr_curve, tree_sweep, Completer, Completion, DepthFrontier,
    LabeledTree, LeafLabel, LeafLabeler, OracleLabeler, SweepConfig, TreeNode,
};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutoff::{CutoffError, CutoffRule, InducedMode};
use crate::metrics::{MetricsError, SequenceDistribution};
use crate::ranked_dist::{DistributionError, GeometricRankedModel, RankedDistribution};
use crate::valid_set::ValidSet;
use crate::TokenId;

/// Enumeration refuses deeper valid sets.
pub const MAX_DEPTH: usize = 6;

/// Enumeration refuses larger vocabularies.
pub const MAX_VOCAB: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum EnumerateError {
    #[error("enumeration budget exceeded: depth {depth} (cap {MAX_DEPTH}), vocab {vocab} (cap {MAX_VOCAB})")]
    BudgetExceeded { depth: usize, vocab: usize },
    #[error("model has no distribution for prefix {prefix:?}")]
    MissingPrefix { prefix: Vec<TokenId> },
    #[error("truncation failed at prefix {prefix:?}: {source}")]
    Truncation {
        prefix: Vec<TokenId>,
        source: CutoffError,
    },
    #[error("{count} valid tokens at stride {stride} do not fit in vocab {vocab}")]
    ArrangementOverflow {
        count: usize,
        stride: usize,
        vocab: usize,
    },
    #[error("model call failed: {detail}")]
    Model { detail: String, remote: bool },
    #[error("candidate list is entirely unlabeled")]
    AllUnlabeled,
    #[error("tree sweep needs rank_limit >= 1 and stride >= 1")]
    BadSweepConfig,
    #[error("completion length {length} is shorter than the candidate depth {depth}")]
    BadCompletionLength { length: usize, depth: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A conditional next-token model: ranked distribution with token
/// identities at every prefix the caller will visit.
pub trait ConditionalModel {
    fn distribution(&self, prefix: &[TokenId]) -> Result<RankedDistribution, EnumerateError>;

    fn vocab_size(&self) -> usize;

    /// Whether independent prefixes may be queried from worker threads.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Conditional model backed by an explicit prefix table.
#[derive(Debug, Clone, Default)]
pub struct TableModel {
    table: BTreeMap<Vec<TokenId>, RankedDistribution>,
    vocab: usize,
}

impl TableModel {
    pub fn new(vocab: usize) -> Self {
        Self {
            table: BTreeMap::new(),
            vocab,
        }
    }

    pub fn insert(&mut self, prefix: Vec<TokenId>, dist: RankedDistribution) {
        self.table.insert(prefix, dist);
    }
}

impl ConditionalModel for TableModel {
    fn distribution(&self, prefix: &[TokenId]) -> Result<RankedDistribution, EnumerateError> {
        self.table
            .get(prefix)
            .cloned()
            .ok_or_else(|| EnumerateError::MissingPrefix {
                prefix: prefix.to_vec(),
            })
    }

    fn vocab_size(&self) -> usize {
        self.vocab
    }
}

/// Where the valid tokens sit in the rank order of a synthetic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankArrangement {
    /// Token id equals rank.
    Identity,
    /// Valid tokens occupy the top |G| ranks.
    TopRankedValid,
    /// Valid tokens at ranks 0, stride, 2*stride, ...; invalid tokens fill
    /// the gaps.
    InterleavedValid { stride: usize },
}

/// Geometric ranked probabilities bound to a valid set through a rank
/// arrangement. At invalid prefixes the arrangement falls back to identity;
/// no metric ever looks there.
#[derive(Debug, Clone)]
pub struct GeometricConditional {
    model: GeometricRankedModel,
    valid: ValidSet,
    arrangement: RankArrangement,
}

impl GeometricConditional {
    pub fn new(
        model: GeometricRankedModel,
        valid: ValidSet,
        arrangement: RankArrangement,
    ) -> Result<Self, EnumerateError> {
        if model.positions() < valid.depth() {
            return Err(DistributionError::PositionOutOfRange {
                position: valid.depth() - 1,
                positions: model.positions(),
            }
            .into());
        }
        if let RankArrangement::InterleavedValid { stride: 0 } = arrangement {
            return Err(EnumerateError::BadSweepConfig);
        }
        Ok(Self {
            model,
            valid,
            arrangement,
        })
    }

    pub fn model(&self) -> &GeometricRankedModel {
        &self.model
    }

    pub fn valid(&self) -> &ValidSet {
        &self.valid
    }

    pub fn arrangement(&self) -> RankArrangement {
        self.arrangement
    }

    /// Token ids by rank for the distribution at `prefix`.
    fn tokens_for(&self, prefix: &[TokenId]) -> Result<Vec<TokenId>, EnumerateError> {
        let vocab = self.model.vocab_size();
        let g = self.valid.valid_tokens(prefix);
        let identity = || (0..vocab as TokenId).collect::<Vec<_>>();
        if g.is_empty() {
            return Ok(identity());
        }
        let positions: Vec<usize> = match self.arrangement {
            RankArrangement::Identity => return Ok(identity()),
            RankArrangement::TopRankedValid => (0..g.len()).collect(),
            RankArrangement::InterleavedValid { stride } => {
                (0..g.len()).map(|i| i * stride).collect()
            }
        };
        if positions.last().copied().unwrap_or(0) >= vocab {
            return Err(EnumerateError::ArrangementOverflow {
                count: g.len(),
                stride: match self.arrangement {
                    RankArrangement::InterleavedValid { stride } => stride,
                    _ => 1,
                },
                vocab,
            });
        }
        let mut tokens = vec![None; vocab];
        for (&tok, &rank) in g.iter().zip(&positions) {
            tokens[rank] = Some(tok);
        }
        let mut filler = (0..vocab as TokenId).filter(|t| !g.contains(t));
        Ok(tokens
            .into_iter()
            .map(|slot| slot.unwrap_or_else(|| filler.next().expect("vocab >= |G|")))
            .collect())
    }
}

impl ConditionalModel for GeometricConditional {
    fn distribution(&self, prefix: &[TokenId]) -> Result<RankedDistribution, EnumerateError> {
        let base = self.model.distribution(prefix.len())?;
        let tokens = self.tokens_for(prefix)?;
        Ok(base.with_tokens(tokens)?)
    }

    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }
}

/// The exact sequence distribution induced by `rule` over `model`,
/// restricted to `valid`'s depth. Every valid sequence appears explicitly;
/// everything else lands in the invalid bucket.
pub fn exact_sequence_distribution(
    model: &dyn ConditionalModel,
    rule: &CutoffRule,
    valid: &ValidSet,
    mode: InducedMode,
) -> Result<SequenceDistribution, EnumerateError> {
    if valid.depth() > MAX_DEPTH || model.vocab_size() > MAX_VOCAB {
        return Err(EnumerateError::BudgetExceeded {
            depth: valid.depth(),
            vocab: model.vocab_size(),
        });
    }
    let mut probs = BTreeMap::new();
    let mut invalid_log_mass = Vec::new();
    let mut prefix = Vec::with_capacity(valid.depth());
    walk(
        model,
        rule,
        valid,
        mode,
        valid.root(),
        &mut prefix,
        0.0,
        &mut probs,
        &mut invalid_log_mass,
    )?;
    // small positive terms, summed ascending for stability
    invalid_log_mass.sort_by(|a, b| a.total_cmp(b));
    let invalid: f64 = invalid_log_mass.iter().sum();
    Ok(SequenceDistribution::new(probs, invalid, valid.depth())?)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    model: &dyn ConditionalModel,
    rule: &CutoffRule,
    valid: &ValidSet,
    mode: InducedMode,
    node: usize,
    prefix: &mut Vec<TokenId>,
    log_weight: f64,
    probs: &mut BTreeMap<Vec<TokenId>, f64>,
    invalid_mass: &mut Vec<f64>,
) -> Result<(), EnumerateError> {
    if prefix.len() == valid.depth() {
        probs.insert(prefix.clone(), log_weight.exp());
        return Ok(());
    }
    let dist = model.distribution(prefix)?;
    let step = prefix.len();
    let retained = rule
        .retain(&dist, step, Some((valid, prefix)))
        .map_err(|source| EnumerateError::Truncation {
            prefix: prefix.clone(),
            source,
        })?;
    let induced = retained
        .induced(mode)
        .map_err(|source| EnumerateError::Truncation {
            prefix: prefix.clone(),
            source,
        })?;
    let scaled = retained.distribution();
    let mut off_valid = 0.0;
    for (&rank, &q) in retained.ranks().iter().zip(&induced) {
        if q <= 0.0 {
            continue;
        }
        let token = scaled.token(rank).ok_or(EnumerateError::Model {
            detail: format!("model distribution at {prefix:?} lacks token identities"),
            remote: false,
        })?;
        match valid.child_node(node, token) {
            Some(child) => {
                prefix.push(token);
                walk(
                    model,
                    rule,
                    valid,
                    mode,
                    child,
                    prefix,
                    log_weight + q.ln(),
                    probs,
                    invalid_mass,
                )?;
                prefix.pop();
            }
            None => off_valid += q,
        }
    }
    if off_valid > 0.0 {
        invalid_mass.push(log_weight.exp() * off_valid);
    }
    Ok(())
}

/// Adapts a cutoff rule over a conditional model to the step-policy
/// interface consumed by the sequence metrics.
pub struct RulePolicy<'a> {
    pub model: &'a dyn ConditionalModel,
    pub rule: &'a CutoffRule,
    pub valid: &'a ValidSet,
}

impl crate::metrics::Policy for RulePolicy<'_> {
    fn retained(
        &self,
        prefix: &[TokenId],
    ) -> Result<std::collections::BTreeSet<TokenId>, MetricsError> {
        let dist = self
            .model
            .distribution(prefix)
            .map_err(|e| MetricsError::PolicyFailure {
                prefix: prefix.to_vec(),
                detail: e.to_string(),
            })?;
        let retained = self
            .rule
            .retain(&dist, prefix.len(), Some((self.valid, prefix)))?;
        Ok(retained.token_set()?)
    }
}

/// One rule evaluation in a sweep: validity always, diversity only when
/// some valid mass survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rule: String,
    pub param: Option<f64>,
    pub temperature: f64,
    pub validity: f64,
    pub diversity: Option<f64>,
}

/// Evaluates every rule against the same model and valid set. Rules run in
/// parallel when the model allows it; results keep the input order either
/// way.
pub fn temperature_frontier(
    model: &(dyn ConditionalModel + Sync),
    valid: &ValidSet,
    rules: &[CutoffRule],
    mode: InducedMode,
) -> Result<Vec<SweepPoint>, EnumerateError> {
    let eval = |rule: &CutoffRule| -> Result<SweepPoint, EnumerateError> {
        let dist = exact_sequence_distribution(model, rule, valid, mode)?;
        let validity = dist.validity(valid);
        let diversity = match dist.diversity(valid) {
            Ok(d) => Some(d),
            Err(MetricsError::NoValidMass) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(SweepPoint {
            rule: rule.name().to_string(),
            param: rule.param(),
            temperature: rule.temperature(),
            validity,
            diversity,
        })
    };
    if model.concurrent_safe() {
        rules.par_iter().map(eval).collect()
    } else {
        rules.iter().map(eval).collect()
    }
}

/// Where a frontier point came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rule: String,
    pub param: Option<f64>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub x: f64,
    pub y: f64,
    pub provenance: Provenance,
}

/// Non-dominated subset under (maximize x, maximize y), ascending in x.
/// Exact duplicates collapse to one point.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut best_y = f64::NEG_INFINITY;
    let mut keep = Vec::new();
    for (x, y) in sorted {
        if y > best_y {
            keep.push((x, y));
            best_y = y;
        }
    }
    keep.reverse();
    keep
}

/// Pareto frontier over sweep points with defined diversity, tagged with
/// the rule that produced each surviving point.
pub fn frontier_from_points(points: &[SweepPoint]) -> Vec<FrontierPoint> {
    let defined: Vec<(&SweepPoint, f64)> = points
        .iter()
        .filter_map(|p| p.diversity.map(|d| (p, d)))
        .collect();
    let frontier = pareto_frontier(
        &defined
            .iter()
            .map(|(p, d)| (p.validity, *d))
            .collect::<Vec<_>>(),
    );
    frontier
        .into_iter()
        .map(|(x, y)| {
            let (p, _) = defined
                .iter()
                .find(|(p, d)| p.validity == x && *d == y)
                .expect("frontier points come from the input");
            FrontierPoint {
                x,
                y,
                provenance: Provenance {
                    rule: p.rule.clone(),
                    param: p.param,
                    temperature: Some(p.temperature),
                },
            }
        })
        .collect()
}
