use std::collections::{HashMap, HashSet};

use crate::corpus::NULL;
use crate::error::{DimoError, Result};

/// Drops special tokens (`[PAD]`, `[MASK]`, `[SEP]`, `[NULL]`).
pub fn content_tokens(ids: &[u32]) -> Vec<u32> {
    ids.iter().copied().filter(|&t| t > NULL).collect()
}

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_default() += 1;
    }
    out
}

/// Sentence BLEU with uniform weights over n = 1..=max_n.
///
/// Clipped n-gram precisions; any zero precision gives 0. The brevity penalty
/// uses the reference length closest to the candidate's, ties toward the
/// shorter one.
pub fn bleu(candidate: &[u32], references: &[&[u32]], max_n: usize) -> f64 {
    let c = candidate.len();
    if c == 0 || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<HashMap<&[u32], usize>> = references.iter().map(|r| ngram_counts(r, n)).collect();
        let clipped: usize = cand
            .iter()
            .map(|(g, &k)| k.min(ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / max_n as f64).exp()
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure: `(1+β²)PR / (R + β²P)`.
pub fn rouge_l(candidate: &[u32], reference: &[u32], beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// CIDEr with document frequencies taken from a fitted reference corpus.
///
/// Each reference set is one document. Weights are `tf · ln(max(D,1)/max(df,1))`;
/// the score is the mean over n of the mean cosine against each reference, so
/// it lies in [0, 1] (conventionally displayed ×10).
#[derive(Debug, Clone)]
pub struct CiderScorer {
    n_max: usize,
    docs: usize,
    df: HashMap<Vec<u32>, usize>,
}

impl CiderScorer {
    pub fn fit(reference_sets: &[Vec<Vec<u32>>], n_max: usize) -> Result<Self> {
        if reference_sets.is_empty() {
            return Err(DimoError::EmptyInput("CIDEr needs at least one reference set".into()));
        }
        if n_max == 0 {
            return Err(DimoError::Config("CIDEr n_max must be ≥ 1".into()));
        }
        let mut df: HashMap<Vec<u32>, usize> = HashMap::new();
        for set in reference_sets {
            let mut seen: HashSet<&[u32]> = HashSet::new();
            for r in set {
                for n in 1..=n_max {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_default() += 1;
            }
        }
        Ok(CiderScorer { n_max, docs: reference_sets.len(), df })
    }

    fn vector(&self, tokens: &[u32], n: usize) -> HashMap<Vec<u32>, f64> {
        let counts = ngram_counts(tokens, n);
        let total: usize = counts.values().sum();
        let d = self.docs.max(1) as f64;
        counts
            .into_iter()
            .map(|(g, k)| {
                let df = self.df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g.to_vec(), k as f64 / total as f64 * (d / df).ln())
            })
            .collect()
    }

    pub fn score(&self, candidate: &[u32], references: &[Vec<u32>]) -> Result<f64> {
        if references.is_empty() {
            return Err(DimoError::EmptyInput("CIDEr needs at least one reference".into()));
        }
        let mut total = 0.0;
        for n in 1..=self.n_max {
            let c = self.vector(candidate, n);
            let per: f64 = references.iter().map(|r| sparse_cosine(&c, &self.vector(r, n))).sum();
            total += per / references.len() as f64;
        }
        Ok(total / self.n_max as f64)
    }
}

fn sparse_cosine(a: &HashMap<Vec<u32>, f64>, b: &HashMap<Vec<u32>, f64>) -> f64 {
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean over candidate tokens of the best cosine to any reference token,
/// each term clamped to [0, 1]. `[PAD]` is excluded on both sides.
pub fn soft_bertscore(candidate: &[u32], reference: &[u32], embedding: impl Fn(u32) -> Vec<f64>) -> f64 {
    let c: Vec<u32> = candidate.iter().copied().filter(|&t| t != crate::corpus::PAD).collect();
    let r: Vec<u32> = reference.iter().copied().filter(|&t| t != crate::corpus::PAD).collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let r_emb: Vec<Vec<f64>> = r.iter().map(|&t| embedding(t)).collect();
    let total: f64 = c
        .iter()
        .map(|&x| {
            let ex = embedding(x);
            r_emb.iter().map(|ey| cos(&ex, ey)).fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0)
        })
        .sum();
    total / c.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_example() {
        // a b c d vs a c d e
        assert!((rouge_l(&[1, 2, 3, 4], &[1, 3, 4, 5], 1.0) - 0.75).abs() < 1e-15);
        assert_eq!(rouge_l(&[1, 2], &[3, 4], 1.0), 0.0);
        assert_eq!(lcs_len(&[1, 2, 3, 4], &[1, 3, 4, 5]), 3);
    }

    #[test]
    fn bleu_identity() {
        let s = [5, 6, 7, 8, 9];
        for n in 1..=5 {
            assert!((bleu(&s, &[&s], n) - 1.0).abs() < 1e-15);
        }
    }
}
