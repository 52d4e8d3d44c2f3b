//! Corpus-level text diversity: self-BLEU and embedding dispersion.

use std::collections::HashMap;
use std::hash::Hash;

use super::MetricsError;

fn ngram_counts<T: Eq + Hash + Clone>(seq: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for window in seq.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram precision: candidate counts capped by the per-gram max
/// over references. Returns (clipped, total).
fn modified_precision<T: Eq + Hash + Clone>(
    candidate: &[T],
    references: &[&[T]],
    n: usize,
) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let total: usize = cand.values().sum();
    let mut max_ref: HashMap<&Vec<T>, usize> = HashMap::new();
    for r in references {
        for (gram, count) in ngram_counts(r, n) {
            let gram = cand.get_key_value(&gram).map(|(k, _)| k);
            if let Some(gram) = gram {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
    }
    let clipped = cand
        .iter()
        .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    (clipped, total)
}

/// BLEU with uniform weights over orders 1..=4 and no smoothing: any order
/// with zero clipped matches sends the score to zero. Brevity penalty uses
/// the reference length closest to the candidate, ties resolved toward the
/// shorter reference.
pub fn bleu_score<T: Eq + Hash + Clone>(candidate: &[T], references: &[&[T]]) -> f64 {
    const MAX_ORDER: usize = 4;
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let (clipped, total) = modified_precision(candidate, references, n);
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total.max(1) as f64).ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| (r.len().abs_diff(c), r.len()))
        .min()
        .unwrap()
        .1;
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_sum / MAX_ORDER as f64).exp()
}

/// Mean leave-one-out BLEU over the corpus. Lower means more diverse;
/// identical generations score one.
pub fn self_bleu<T: Eq + Hash + Clone>(generations: &[Vec<T>]) -> Result<f64, MetricsError> {
    if generations.len() < 2 {
        return Err(MetricsError::TooFewSequences {
            needed: 2,
            got: generations.len(),
        });
    }
    let total: f64 = (0..generations.len())
        .map(|i| {
            let refs: Vec<&[T]> = generations
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, g)| g.as_slice())
                .collect();
            bleu_score(&generations[i], &refs)
        })
        .sum();
    Ok(total / generations.len() as f64)
}

/// Mean pairwise cosine distance (1 - cos) over embedding vectors.
pub fn embedding_diversity(embeddings: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if embeddings.len() < 2 {
        return Err(MetricsError::TooFewSequences {
            needed: 2,
            got: embeddings.len(),
        });
    }
    let dim = embeddings[0].len();
    let mut norms = Vec::with_capacity(embeddings.len());
    for (index, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(MetricsError::DimensionMismatch {
                index,
                expected: dim,
                got: e.len(),
            });
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(MetricsError::ZeroVector { index });
        }
        norms.push(norm);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let dot: f64 = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(a, b)| a * b)
                .sum();
            total += 1.0 - dot / (norms[i] * norms[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
