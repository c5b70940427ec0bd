use std::collections::{BTreeMap, HashMap};

use crate::corpus::{content_len, TextVocab, NULL};
use crate::decode::{make_task_mask, progressive_decode, DecodeConfig, TaskRequest};
use crate::error::{DimoError, Result};
use crate::model::{DenoiserParams, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// Pseudo captions from the frozen model's own M2T branch.
    SelfM2t,
    /// Pseudo captions from a caller-supplied [`MotionCaptioner`].
    ExternalExtractor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub lambda_verb: f64,
    pub lambda_clip: f64,
    pub gamma: f64,
    pub kind: RewardKind,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { lambda_verb: 0.3, lambda_clip: 0.7, gamma: 1.0, kind: RewardKind::SelfM2t }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(DimoError::Config("γ must be finite and > 0".into()));
        }
        if !(self.lambda_verb >= 0.0 && self.lambda_clip >= 0.0) {
            return Err(DimoError::Config("reward weights must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// `exp(−γ·|1 − cand/max(ref, 1)|)`.
pub fn length_penalty(cand_len: usize, ref_len: usize, gamma: f64) -> f64 {
    let ratio = cand_len as f64 / ref_len.max(1) as f64;
    (-gamma * (1.0 - ratio).abs()).exp()
}

/// Fraction of the reference's distinct verbs that the candidate also uses.
pub fn verb_match(cand: &[u32], reference: &[u32], vocab: &TextVocab) -> f64 {
    let r = vocab.verb_set(reference);
    let c = vocab.verb_set(cand);
    r.intersection(&c).count() as f64 / r.len().max(1) as f64
}

pub type Gram = (u32, Option<u32>);

/// L2-normalized TF-IDF vectors over caption unigrams and bigrams.
///
/// Only non-special tokens count. Document frequencies come from the captions
/// passed to [`CaptionEmbedder::fit`]; n-grams never seen there get the
/// largest idf. Uses smoothed idf `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEmbedder {
    docs: usize,
    df: HashMap<Gram, usize>,
    first_content: u32,
}

/// Sparse embedding, sorted by n-gram.
pub type CaptionVector = BTreeMap<Gram, f64>;

impl CaptionEmbedder {
    pub fn fit<'a>(captions: impl IntoIterator<Item = &'a [u32]>) -> Result<Self> {
        let mut e = CaptionEmbedder { docs: 0, df: HashMap::new(), first_content: NULL + 1 };
        for c in captions {
            e.docs += 1;
            for g in e.counts(c).into_keys() {
                *e.df.entry(g).or_default() += 1;
            }
        }
        if e.docs == 0 {
            return Err(DimoError::EmptyInput("no captions to fit the embedder on".into()));
        }
        Ok(e)
    }

    fn counts(&self, caption: &[u32]) -> BTreeMap<Gram, usize> {
        let words: Vec<u32> = caption.iter().copied().filter(|&t| t >= self.first_content).collect();
        let mut out = BTreeMap::new();
        for (i, &w) in words.iter().enumerate() {
            *out.entry((w, None)).or_default() += 1;
            if let Some(&next) = words.get(i + 1) {
                *out.entry((w, Some(next))).or_default() += 1;
            }
        }
        out
    }

    /// N-grams seen while fitting, sorted.
    pub fn vocabulary(&self) -> Vec<Gram> {
        let mut v: Vec<Gram> = self.df.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn idf(&self, gram: &Gram) -> f64 {
        let df = self.df.get(gram).copied().unwrap_or(0);
        ((1.0 + self.docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Embedding of a caption; empty when the caption has no content tokens.
    pub fn embed(&self, caption: &[u32]) -> CaptionVector {
        let mut v: CaptionVector = self.counts(caption).into_iter().map(|(g, n)| (g, n as f64 * self.idf(&g))).collect();
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.values_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Cosine of two captions' embeddings; 0 if either has no content.
    pub fn similarity(&self, a: &[u32], b: &[u32]) -> f64 {
        cosine(&self.embed(a), &self.embed(b))
    }
}

/// Dot product of two normalized sparse vectors, clamped to [0, 1].
pub fn cosine(a: &CaptionVector, b: &CaptionVector) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small.iter().filter_map(|(g, x)| large.get(g).map(|y| x * y)).sum();
    dot.clamp(0.0, 1.0)
}

/// `λ_verb·VerbMatch + λ_clip·cos·LP`.
pub fn reward_m2t(cand: &[u32], reference: &[u32], embedder: &CaptionEmbedder, vocab: &TextVocab, cfg: &RewardConfig) -> f64 {
    let lp = length_penalty(content_len(cand), content_len(reference), cfg.gamma);
    cfg.lambda_verb * verb_match(cand, reference, vocab) + cfg.lambda_clip * embedder.similarity(cand, reference) * lp
}

/// Anything that turns a motion grid into a caption.
pub trait MotionCaptioner: Sync {
    fn caption(&self, motion: &[u32]) -> Result<Vec<u32>>;
}

/// Captions motion with a frozen denoiser snapshot at temperature 0.
#[derive(Debug, Clone)]
pub struct FrozenCaptioner<F> {
    pub params: DenoiserParams<F>,
    pub decode: DecodeConfig,
}

impl<F: Real> FrozenCaptioner<F> {
    pub fn new(params: DenoiserParams<F>, decode: &DecodeConfig) -> Self {
        FrozenCaptioner { params, decode: DecodeConfig { temperature: 0.0, ..decode.clone() } }
    }
}

impl<F: Real> MotionCaptioner for FrozenCaptioner<F> {
    fn caption(&self, motion: &[u32]) -> Result<Vec<u32>> {
        let init = make_task_mask(&self.params, &TaskRequest::M2T { motion: motion.to_vec() })?;
        Ok(progressive_decode(&self.params, &init, &self.decode)?.0.text)
    }
}

/// Cosine between the pseudo caption of `motion` and the reference caption.
pub fn reward_t2m(motion: &[u32], reference: &[u32], captioner: &dyn MotionCaptioner, embedder: &CaptionEmbedder) -> Result<f64> {
    let pseudo = captioner.caption(motion)?;
    Ok(embedder.similarity(&pseudo, reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(vocab: &TextVocab, s: &str) -> Vec<u32> {
        vocab.tokenize(s, 12).unwrap()
    }

    #[test]
    fn length_penalty_examples() {
        assert_eq!(length_penalty(5, 5, 1.0), 1.0);
        assert!((length_penalty(10, 5, 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((length_penalty(3, 0, 1.0) - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn verb_match_examples() {
        let v = TextVocab::standard();
        let r = ids(&v, "a person walks forward then jumps up");
        assert_eq!(verb_match(&r, &r, &v), 1.0);
        assert_eq!(verb_match(&ids(&v, "someone walks ahead"), &r, &v), 0.5);
        assert_eq!(verb_match(&r, &ids(&v, "a person"), &v), 0.0);
    }

    #[test]
    fn m2t_reward_bounds() {
        let v = TextVocab::standard();
        let caps = [ids(&v, "a person walks forward"), ids(&v, "someone jumps up then waves hello")];
        let e = CaptionEmbedder::fit(caps.iter().map(|c| c.as_slice())).unwrap();
        let cfg = RewardConfig::default();
        assert!((reward_m2t(&caps[0], &caps[0], &e, &v, &cfg) - 1.0).abs() < 1e-12);
        let disjoint = ids(&v, "the dancer squats low");
        assert_eq!(reward_m2t(&disjoint, &caps[1], &e, &v, &cfg), 0.0);
        assert_eq!(e.similarity(&[0; 12], &caps[0]), 0.0);
    }
}
