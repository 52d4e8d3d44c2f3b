//! Candidate-tree sweeps: branch over spaced ranks, complete, label.
//!
//! A sweep expands a small tree over the model's rank order: at every node
//! up to a fixed depth, the candidates are the tokens at ranks
//! 0, stride, 2*stride, ... (rank_limit of them, clipped to the
//! distribution). Each leaf is completed to full length, the completions
//! are labeled, and labels propagate upward: a node is valid when any
//! descendant completion is, unlabeled when nothing below it resolved, and
//! invalid otherwise. Per-node precision/recall curves over the labeled
//! candidates summarize how fast validity decays down the rank order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConditionalModel, EnumerateError};
use crate::valid_set::ValidSet;
use crate::TokenId;

/// How leaves of the candidate tree are extended to full sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Completer {
    /// Follow rank zero to the end.
    Greedy,
    /// Draw n completions from the model's untruncated distribution.
    Sampled { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Depth of the candidate tree.
    pub depth: usize,
    /// Number of candidate ranks per node.
    pub rank_limit: usize,
    /// Spacing between candidate ranks.
    pub stride: usize,
    pub completer: Completer,
    /// Total length completions are extended to, start prefix included.
    pub completion_length: usize,
    #[serde(default)]
    pub start_prefix: Vec<TokenId>,
}

/// Label attached to a completion or propagated to a tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafLabel {
    Valid,
    Invalid,
    Unlabeled,
}

/// Decides whether a completed sequence is valid. Implementations may
/// consult a reference set or an external judge; Unlabeled means the
/// labeler could not tell.
pub trait LeafLabeler {
    fn label(&self, sequence: &[TokenId]) -> Result<LeafLabel, EnumerateError>;
}

/// Labels by membership in a valid set; never returns Unlabeled.
pub struct OracleLabeler<'a> {
    valid: &'a ValidSet,
}

impl<'a> OracleLabeler<'a> {
    pub fn new(valid: &'a ValidSet) -> Self {
        Self { valid }
    }
}

impl LeafLabeler for OracleLabeler<'_> {
    fn label(&self, sequence: &[TokenId]) -> Result<LeafLabel, EnumerateError> {
        Ok(if self.valid.contains(sequence) {
            LeafLabel::Valid
        } else {
            LeafLabel::Invalid
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub sequence: Vec<TokenId>,
    pub label: LeafLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Rank this token held in its parent's distribution.
    pub rank: Option<usize>,
    pub token: Option<TokenId>,
    /// Model probability of the token at its step; 1 for the root.
    pub prob: f64,
    pub children: Vec<usize>,
    pub label: LeafLabel,
    /// Present only on candidate-tree leaves.
    pub completions: Vec<Completion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTree {
    pub config: SweepConfig,
    pub nodes: Vec<TreeNode>,
    pub unlabeled_completions: usize,
}

fn path_to(nodes: &[TreeNode], start_prefix: &[TokenId], node: usize) -> Vec<TokenId> {
    let mut rev = Vec::new();
    let mut cur = Some(node);
    while let Some(i) = cur {
        if let Some(t) = nodes[i].token {
            rev.push(t);
        }
        cur = nodes[i].parent;
    }
    let mut seq = start_prefix.to_vec();
    seq.extend(rev.into_iter().rev());
    seq
}

impl LabeledTree {
    /// Full token sequence from the start prefix to `node`.
    pub fn sequence_to(&self, node: usize) -> Vec<TokenId> {
        path_to(&self.nodes, &self.config.start_prefix, node)
    }

    /// Candidate labels of `node`'s children in rank order.
    pub fn candidate_labels(&self, node: usize) -> Vec<LeafLabel> {
        self.nodes[node]
            .children
            .iter()
            .map(|&c| self.nodes[c].label)
            .collect()
    }
}

/// Expands, completes, and labels a candidate tree.
pub fn tree_sweep(
    model: &dyn ConditionalModel,
    config: &SweepConfig,
    labeler: &dyn LeafLabeler,
) -> Result<LabeledTree, EnumerateError> {
    if config.depth == 0 || config.rank_limit == 0 || config.stride == 0 {
        return Err(EnumerateError::BadSweepConfig);
    }
    if config.completion_length < config.start_prefix.len() + config.depth {
        return Err(EnumerateError::BadCompletionLength {
            length: config.completion_length,
            depth: config.start_prefix.len() + config.depth,
        });
    }

    let mut nodes = vec![TreeNode {
        parent: None,
        depth: 0,
        rank: None,
        token: None,
        prob: 1.0,
        children: Vec::new(),
        label: LeafLabel::Unlabeled,
        completions: Vec::new(),
    }];
    // breadth-first expansion, so children always follow their parent
    let mut cursor = 0;
    while cursor < nodes.len() {
        let depth = nodes[cursor].depth;
        if depth == config.depth {
            cursor += 1;
            continue;
        }
        let prefix = path_to(&nodes, &config.start_prefix, cursor);
        let dist = model.distribution(&prefix)?;
        for i in 0..config.rank_limit {
            let rank = i * config.stride;
            if rank >= dist.len() {
                break;
            }
            let token = dist.token(rank).ok_or(EnumerateError::Model {
                detail: format!("distribution at {prefix:?} lacks token identities"),
                remote: false,
            })?;
            let child = nodes.len();
            nodes.push(TreeNode {
                parent: Some(cursor),
                depth: depth + 1,
                rank: Some(rank),
                token: Some(token),
                prob: dist.prob(rank),
                children: Vec::new(),
                label: LeafLabel::Unlabeled,
                completions: Vec::new(),
            });
            nodes[cursor].children.push(child);
        }
        cursor += 1;
    }
    let mut tree = LabeledTree {
        config: config.clone(),
        nodes,
        unlabeled_completions: 0,
    };

    // complete and label the candidate-tree leaves
    for i in 0..tree.nodes.len() {
        if tree.nodes[i].depth != config.depth {
            continue;
        }
        let base = tree.sequence_to(i);
        let sequences = complete(model, &base, config)?;
        let mut completions = Vec::with_capacity(sequences.len());
        for sequence in sequences {
            let label = labeler.label(&sequence)?;
            if label == LeafLabel::Unlabeled {
                tree.unlabeled_completions += 1;
            }
            completions.push(Completion { sequence, label });
        }
        tree.nodes[i].label = combine(completions.iter().map(|c| c.label));
        tree.nodes[i].completions = completions;
    }

    // children precede parents nowhere, so a reverse pass settles labels
    for i in (0..tree.nodes.len()).rev() {
        if tree.nodes[i].children.is_empty() {
            continue;
        }
        let labels: Vec<LeafLabel> = tree.nodes[i]
            .children
            .iter()
            .map(|&c| tree.nodes[c].label)
            .collect();
        tree.nodes[i].label = combine(labels.into_iter());
    }
    Ok(tree)
}

fn combine(labels: impl Iterator<Item = LeafLabel>) -> LeafLabel {
    let mut saw_unlabeled = false;
    let mut saw_any = false;
    for label in labels {
        saw_any = true;
        match label {
            LeafLabel::Valid => return LeafLabel::Valid,
            LeafLabel::Unlabeled => saw_unlabeled = true,
            LeafLabel::Invalid => {}
        }
    }
    if !saw_any || saw_unlabeled {
        LeafLabel::Unlabeled
    } else {
        LeafLabel::Invalid
    }
}

fn complete(
    model: &dyn ConditionalModel,
    base: &[TokenId],
    config: &SweepConfig,
) -> Result<Vec<Vec<TokenId>>, EnumerateError> {
    let target = config.completion_length;
    match config.completer {
        Completer::Greedy => {
            let mut seq = base.to_vec();
            while seq.len() < target {
                let dist = model.distribution(&seq)?;
                let token = dist.token(0).ok_or(EnumerateError::Model {
                    detail: format!("distribution at {seq:?} lacks token identities"),
                    remote: false,
                })?;
                seq.push(token);
            }
            Ok(vec![seq])
        }
        Completer::Sampled { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(leaf_seed(seed, base));
            let mut out = Vec::with_capacity(n.max(1));
            for _ in 0..n.max(1) {
                let mut seq = base.to_vec();
                while seq.len() < target {
                    let dist = model.distribution(&seq)?;
                    let x: f64 = rng.gen();
                    let mut cum = 0.0;
                    let mut pick = dist.len() - 1;
                    for rank in 0..dist.len() {
                        cum += dist.prob(rank);
                        if x < cum {
                            pick = rank;
                            break;
                        }
                    }
                    let token = dist.token(pick).ok_or(EnumerateError::Model {
                        detail: format!("distribution at {seq:?} lacks token identities"),
                        remote: false,
                    })?;
                    seq.push(token);
                }
                out.push(seq);
            }
            Ok(out)
        }
    }
}

/// Stable per-leaf stream: the sweep seed folded with the leaf sequence,
/// so traversal order cannot change the draws.
fn leaf_seed(base: u64, seq: &[TokenId]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &t in seq {
        for b in t.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    base ^ h
}

/// Precision/recall at every cut j over a rank-ordered candidate list.
///
/// Unlabeled candidates are dropped first; an entirely unlabeled list is an
/// error. When no candidate is valid, recall is zero at every cut rather
/// than undefined, which keeps all-invalid nodes on the curve.
pub fn local_pr_curve(labels: &[LeafLabel]) -> Result<Vec<(f64, f64)>, EnumerateError> {
    let labeled: Vec<bool> = labels
        .iter()
        .filter(|l| **l != LeafLabel::Unlabeled)
        .map(|l| *l == LeafLabel::Valid)
        .collect();
    if labeled.is_empty() {
        return Err(EnumerateError::AllUnlabeled);
    }
    let total_valid = labeled.iter().filter(|&&v| v).count();
    let mut seen_valid = 0usize;
    let mut curve = Vec::with_capacity(labeled.len());
    for (j, &is_valid) in labeled.iter().enumerate() {
        if is_valid {
            seen_valid += 1;
        }
        let precision = seen_valid as f64 / (j + 1) as f64;
        let recall = if total_valid == 0 {
            0.0
        } else {
            seen_valid as f64 / total_valid as f64
        };
        curve.push((precision, recall));
    }
    Ok(curve)
}

/// The precision grid used by depth summaries: 0, 0.05, ..., 1.
pub const PRECISION_GRID_STEPS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub precision: f64,
    pub max_recall: f64,
    pub min_recall: f64,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthFrontier {
    pub depth: usize,
    pub nodes: usize,
    pub grid: Vec<GridPoint>,
}

/// Best recall achievable at each precision floor, aggregated over all
/// nodes at each depth. A node's value at floor g is the best recall among
/// its PR points with precision >= g, zero when none qualifies. Nodes whose
/// candidates are entirely unlabeled are skipped; depths with no usable
/// node are omitted.
pub fn depth_frontier_summary(tree: &LabeledTree) -> Vec<DepthFrontier> {
    let mut out = Vec::new();
    for depth in 0..tree.config.depth {
        let mut per_node: Vec<Vec<f64>> = Vec::new();
        for (i, node) in tree.nodes.iter().enumerate() {
            if node.depth != depth || node.children.is_empty() {
                continue;
            }
            let curve = match local_pr_curve(&tree.candidate_labels(i)) {
                Ok(c) => c,
                Err(EnumerateError::AllUnlabeled) => continue,
                Err(_) => unreachable!("pr curve only fails on unlabeled input"),
            };
            let recalls = (0..PRECISION_GRID_STEPS)
                .map(|g| {
                    let floor = g as f64 * 0.05;
                    curve
                        .iter()
                        .filter(|(p, _)| *p >= floor - 1e-12)
                        .map(|(_, r)| *r)
                        .fold(0.0, f64::max)
                })
                .collect();
            per_node.push(recalls);
        }
        if per_node.is_empty() {
            continue;
        }
        let grid = (0..PRECISION_GRID_STEPS)
            .map(|g| {
                let column: Vec<f64> = per_node.iter().map(|r| r[g]).collect();
                GridPoint {
                    precision: g as f64 * 0.05,
                    max_recall: column.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    min_recall: column.iter().copied().fold(f64::INFINITY, f64::min),
                    mean_recall: column.iter().sum::<f64>() / column.len() as f64,
                }
            })
            .collect();
        out.push(DepthFrontier {
            depth,
            nodes: per_node.len(),
            grid,
        });
    }
    out
}
