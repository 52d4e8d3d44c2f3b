//! Counting prefix tries over fixed-length token sequences.
//!
//! A valid set V holds sequences of one fixed length d. Each trie node stores
//! N(prefix) = |{ z : prefix ∘ z ∈ V }|, so membership, continuation counts
//! and the per-prefix valid token sets G(prefix) are all O(prefix) lookups.
//! Every constructor maintains N(node) = Σ_children N(child) with leaf
//! count 1.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::TokenId;

/// Generators refuse to build sets larger than this.
pub const MAX_SET_SIZE: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ValidSetError {
    #[error("valid set must contain at least one sequence")]
    Empty,
    #[error("sequence {index} has length {got}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sequence {index} duplicates an earlier sequence")]
    DuplicateSequence { index: usize },
    #[error("sequences must be nonempty")]
    ZeroLength,
    #[error("base must be at least 1, got {base}")]
    BadBase { base: usize },
    #[error("token map must list {expected} distinct ids, got {got}")]
    BadTokenMap { expected: usize, got: usize },
    #[error("target {target} unreachable: digit sums range up to {max}")]
    InfeasibleTarget { target: u64, max: u64 },
    #[error("pad token {token} collides with sequence content")]
    PadCollision { token: TokenId },
    #[error("generator would produce {size} sequences, cap is {MAX_SET_SIZE}")]
    BudgetExceeded { size: u64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed valid-set spec: {0}")]
    Malformed(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    count: u64,
}

impl Node {
    fn new() -> Self {
        Self {
            children: BTreeMap::new(),
            count: 0,
        }
    }
}

/// Reference set of fixed-length valid sequences, stored as a counting trie.
#[derive(Debug, Clone)]
pub struct ValidSet {
    nodes: Vec<Node>,
    depth: usize,
    pad_token: Option<TokenId>,
}

impl ValidSet {
    /// Builds from explicit sequences. All must share one nonzero length and
    /// be pairwise distinct.
    pub fn from_sequences(sequences: &[Vec<TokenId>]) -> Result<Self, ValidSetError> {
        let Some(first) = sequences.first() else {
            return Err(ValidSetError::Empty);
        };
        let depth = first.len();
        if depth == 0 {
            return Err(ValidSetError::ZeroLength);
        }
        let mut set = Self {
            nodes: vec![Node::new()],
            depth,
            pad_token: None,
        };
        for (index, seq) in sequences.iter().enumerate() {
            if seq.len() != depth {
                return Err(ValidSetError::LengthMismatch {
                    index,
                    expected: depth,
                    got: seq.len(),
                });
            }
            set.insert(seq, index)?;
        }
        Ok(set)
    }

    fn insert(&mut self, seq: &[TokenId], index: usize) -> Result<(), ValidSetError> {
        let mut node = 0usize;
        let mut created = false;
        for &tok in seq {
            self.nodes[node].count += 1;
            node = match self.nodes[node].children.get(&tok) {
                Some(&c) => c,
                None => {
                    created = true;
                    let c = self.nodes.len();
                    self.nodes.push(Node::new());
                    self.nodes[node].children.insert(tok, c);
                    c
                }
            };
        }
        if !created {
            return Err(ValidSetError::DuplicateSequence { index });
        }
        self.nodes[node].count += 1;
        Ok(())
    }

    /// All length-d sequences over digits 0..base, mapped through `token_map`.
    pub fn digits_unconstrained(
        d: usize,
        base: usize,
        token_map: Option<&DigitTokenMap>,
    ) -> Result<Self, ValidSetError> {
        Self::digits(d, base, token_map, None)
    }

    /// Length-d digit strings whose digit sum equals (or stays at most)
    /// `target`, mapped through `token_map`.
    pub fn digits_sum_constrained(
        d: usize,
        base: usize,
        target: u64,
        mode: SumMode,
        token_map: Option<&DigitTokenMap>,
    ) -> Result<Self, ValidSetError> {
        Self::digits(d, base, token_map, Some((target, mode)))
    }

    fn digits(
        d: usize,
        base: usize,
        token_map: Option<&DigitTokenMap>,
        constraint: Option<(u64, SumMode)>,
    ) -> Result<Self, ValidSetError> {
        if d == 0 {
            return Err(ValidSetError::ZeroLength);
        }
        if base == 0 {
            return Err(ValidSetError::BadBase { base });
        }
        let identity;
        let map = match token_map {
            Some(m) => {
                if m.ids.len() != base {
                    return Err(ValidSetError::BadTokenMap {
                        expected: base,
                        got: m.ids.len(),
                    });
                }
                m
            }
            None => {
                identity = DigitTokenMap::identity(base);
                &identity
            }
        };

        // ways[pos][sum] = completions of positions pos..d given prefix sum
        let max_sum = (d as u64) * (base as u64 - 1);
        let width = max_sum as usize + 1;
        let mut ways = vec![vec![0u64; width]; d + 1];
        for (sum, w) in ways[d].iter_mut().enumerate() {
            *w = match constraint {
                None => 1,
                Some((target, SumMode::Equals)) => u64::from(sum as u64 == target),
                Some((target, SumMode::AtMost)) => u64::from(sum as u64 <= target),
            };
        }
        for pos in (0..d).rev() {
            for sum in 0..width {
                let mut total = 0u64;
                for g in 0..base {
                    if sum + g < width {
                        total = total.saturating_add(ways[pos + 1][sum + g]);
                    }
                }
                ways[pos][sum] = total;
            }
        }
        let total = ways[0][0];
        if total == 0 {
            let (target, _) = constraint.expect("unconstrained sets are never empty");
            return Err(ValidSetError::InfeasibleTarget {
                target,
                max: max_sum,
            });
        }
        if total > MAX_SET_SIZE {
            return Err(ValidSetError::BudgetExceeded { size: total });
        }

        let mut set = Self {
            nodes: vec![Node::new()],
            depth: d,
            pad_token: None,
        };
        set.nodes[0].count = total;
        // counts come straight from the DP table, so the sum invariant holds
        // by construction
        let mut stack = vec![(0usize, 0usize, 0usize)]; // node, pos, sum
        while let Some((node, pos, sum)) = stack.pop() {
            if pos == d {
                continue;
            }
            for g in 0..base {
                let w = ways[pos + 1][sum + g];
                if w == 0 {
                    continue;
                }
                let child = set.nodes.len();
                set.nodes.push(Node {
                    children: BTreeMap::new(),
                    count: w,
                });
                set.nodes[node].children.insert(map.ids[g], child);
                stack.push((child, pos + 1, sum + g));
            }
        }
        Ok(set)
    }

    /// Variable-length items right-padded with `pad` to a common length.
    ///
    /// The pad token must not occur inside any item; it is recorded so text
    /// metrics can strip it back off.
    pub fn finite_enumeration(items: &[Vec<TokenId>], pad: TokenId) -> Result<Self, ValidSetError> {
        if items.is_empty() {
            return Err(ValidSetError::Empty);
        }
        let d = items.iter().map(Vec::len).max().unwrap();
        if d == 0 {
            return Err(ValidSetError::ZeroLength);
        }
        let mut padded = Vec::with_capacity(items.len());
        for item in items {
            if item.contains(&pad) {
                return Err(ValidSetError::PadCollision { token: pad });
            }
            let mut seq = item.clone();
            seq.resize(d, pad);
            padded.push(seq);
        }
        let mut set = Self::from_sequences(&padded)?;
        set.pad_token = Some(pad);
        Ok(set)
    }

    /// Builds from a parsed spec.
    pub fn from_spec(spec: &ValidSetSpec) -> Result<Self, ValidSetError> {
        spec.build()
    }

    /// Reads a JSON spec file (explicit sequences or a named generator).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ValidSetError> {
        let text = std::fs::read_to_string(path)?;
        let spec: ValidSetSpec = serde_json::from_str(&text)?;
        spec.build()
    }

    /// Number of sequences in the set.
    pub fn total(&self) -> u64 {
        self.nodes[0].count
    }

    /// Common sequence length d.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn pad_token(&self) -> Option<TokenId> {
        self.pad_token
    }

    /// `seq` with trailing pad tokens removed.
    pub fn strip_padding<'a>(&self, seq: &'a [TokenId]) -> &'a [TokenId] {
        match self.pad_token {
            Some(pad) => {
                let end = seq.iter().rposition(|&t| t != pad).map_or(0, |i| i + 1);
                &seq[..end]
            }
            None => seq,
        }
    }

    /// N(prefix): number of valid sequences extending `prefix`. Zero for
    /// prefixes off the trie or longer than d.
    pub fn continuation_count(&self, prefix: &[TokenId]) -> u64 {
        match self.node_at(prefix) {
            Some(n) => self.nodes[n].count,
            None => 0,
        }
    }

    /// G(prefix): tokens with a valid continuation, ascending. Empty for
    /// invalid prefixes.
    pub fn valid_tokens(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        match self.node_at(prefix) {
            Some(n) => self.nodes[n].children.keys().copied().collect(),
            None => Vec::new(),
        }
    }

    pub fn is_valid_prefix(&self, prefix: &[TokenId]) -> bool {
        self.continuation_count(prefix) > 0
    }

    pub fn contains(&self, seq: &[TokenId]) -> bool {
        seq.len() == self.depth && self.continuation_count(seq) > 0
    }

    fn node_at(&self, prefix: &[TokenId]) -> Option<usize> {
        if prefix.len() > self.depth {
            return None;
        }
        let mut node = 0usize;
        for tok in prefix {
            node = *self.nodes[node].children.get(tok)?;
        }
        Some(node)
    }

    /// Root node id for node-indexed traversal.
    pub fn root(&self) -> usize {
        0
    }

    pub fn child_node(&self, node: usize, token: TokenId) -> Option<usize> {
        self.nodes[node].children.get(&token).copied()
    }

    /// Children of `node` in ascending token order.
    pub fn node_children(&self, node: usize) -> impl Iterator<Item = (TokenId, usize)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &c)| (t, c))
    }

    pub fn node_count(&self, node: usize) -> u64 {
        self.nodes[node].count
    }

    /// Per-depth |G| profile if branching is invariant across same-depth
    /// valid prefixes; otherwise the first witnessing pair.
    pub fn branching_profile(&self) -> Result<BranchingProfile, BranchingViolation> {
        let mut counts = Vec::with_capacity(self.depth);
        let mut level: Vec<(Vec<TokenId>, usize)> = vec![(Vec::new(), 0)];
        for depth in 0..self.depth {
            let first = &level[0];
            let expected = self.nodes[first.1].children.len();
            let first_prefix = first.0.clone();
            for (prefix, node) in &level {
                let got = self.nodes[*node].children.len();
                if got != expected {
                    return Err(BranchingViolation {
                        depth,
                        prefix_a: first_prefix,
                        count_a: expected,
                        prefix_b: prefix.clone(),
                        count_b: got,
                    });
                }
            }
            counts.push(expected);
            let mut next = Vec::new();
            for (prefix, node) in &level {
                for (tok, child) in self.nodes[*node].children.iter() {
                    let mut p = prefix.clone();
                    p.push(*tok);
                    next.push((p, *child));
                }
            }
            level = next;
        }
        let branching_length = counts.iter().filter(|&&v| v >= 2).count();
        Ok(BranchingProfile {
            counts,
            branching_length,
        })
    }

    /// All sequences in lexicographic token order.
    pub fn sequences(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::with_capacity(self.total() as usize);
        let mut path = Vec::with_capacity(self.depth);
        self.collect_sequences(0, 0, &mut path, &mut out);
        out
    }

    fn collect_sequences(
        &self,
        node: usize,
        depth: usize,
        path: &mut Vec<TokenId>,
        out: &mut Vec<Vec<TokenId>>,
    ) {
        if depth == self.depth {
            out.push(path.clone());
            return;
        }
        for (tok, child) in self.nodes[node].children.iter() {
            path.push(*tok);
            self.collect_sequences(*child, depth + 1, path, out);
            path.pop();
        }
    }

    /// Checks N(node) = Σ children N(child) at every internal node.
    pub fn verify_counts(&self) -> bool {
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            if depth == self.depth {
                if self.nodes[node].count != 1 {
                    return false;
                }
                continue;
            }
            let sum: u64 = self.nodes[node]
                .children
                .values()
                .map(|&c| self.nodes[c].count)
                .sum();
            if sum != self.nodes[node].count {
                return false;
            }
            for &c in self.nodes[node].children.values() {
                stack.push((c, depth + 1));
            }
        }
        true
    }
}

/// Per-depth valid-token counts (v_1..v_d) and the number of branching
/// positions m = |{t : v_t >= 2}|.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchingProfile {
    pub counts: Vec<usize>,
    pub branching_length: usize,
}

/// First pair of same-depth valid prefixes with different |G|.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(
    "branching differs at depth {depth}: prefix {prefix_a:?} has {count_a} \
     valid tokens, prefix {prefix_b:?} has {count_b}"
)]
pub struct BranchingViolation {
    pub depth: usize,
    pub prefix_a: Vec<TokenId>,
    pub count_a: usize,
    pub prefix_b: Vec<TokenId>,
    pub count_b: usize,
}

/// Binding from digit values 0..base to token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitTokenMap {
    ids: Vec<TokenId>,
}

impl DigitTokenMap {
    /// Digit g is token g.
    pub fn identity(base: usize) -> Self {
        Self {
            ids: (0..base as TokenId).collect(),
        }
    }

    pub fn new(ids: Vec<TokenId>) -> Result<Self, ValidSetError> {
        let expected = ids.len();
        let distinct: std::collections::BTreeSet<_> = ids.iter().collect();
        if distinct.len() != expected || expected == 0 {
            return Err(ValidSetError::BadTokenMap {
                expected,
                got: distinct.len(),
            });
        }
        Ok(Self { ids })
    }

    pub fn token_for(&self, digit: usize) -> TokenId {
        self.ids[digit]
    }
}

/// Whether a digit-sum constraint is an equality or an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum SumMode {
    #[default]
    Equals,
    AtMost,
}

/// On-disk valid-set description: explicit sequences or a named generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValidSetSpec {
    Generator(GeneratorSpec),
    Explicit {
        d: usize,
        sequences: Vec<Vec<TokenId>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", content = "params", rename_all = "snake_case")]
pub enum GeneratorSpec {
    DigitsUnconstrained {
        d: usize,
        base: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_map: Option<Vec<TokenId>>,
    },
    DigitsSumConstrained {
        d: usize,
        base: usize,
        target: u64,
        #[serde(default)]
        mode: SumMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_map: Option<Vec<TokenId>>,
    },
    FiniteEnumeration {
        sequences: Vec<Vec<TokenId>>,
        pad: TokenId,
    },
}

impl ValidSetSpec {
    pub fn build(&self) -> Result<ValidSet, ValidSetError> {
        match self {
            Self::Explicit { d, sequences } => {
                let set = ValidSet::from_sequences(sequences)?;
                if set.depth() != *d {
                    return Err(ValidSetError::LengthMismatch {
                        index: 0,
                        expected: *d,
                        got: set.depth(),
                    });
                }
                Ok(set)
            }
            Self::Generator(g) => g.build(),
        }
    }
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<ValidSet, ValidSetError> {
        match self {
            Self::DigitsUnconstrained { d, base, token_map } => {
                let map = token_map.clone().map(DigitTokenMap::new).transpose()?;
                ValidSet::digits_unconstrained(*d, *base, map.as_ref())
            }
            Self::DigitsSumConstrained {
                d,
                base,
                target,
                mode,
                token_map,
            } => {
                let map = token_map.clone().map(DigitTokenMap::new).transpose()?;
                ValidSet::digits_sum_constrained(*d, *base, *target, *mode, map.as_ref())
            }
            Self::FiniteEnumeration { sequences, pad } => {
                ValidSet::finite_enumeration(sequences, *pad)
            }
        }
    }
}
