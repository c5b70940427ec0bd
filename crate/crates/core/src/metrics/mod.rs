//! Evaluation metrics for both directions.
//!
//! Motion metrics (R-precision, FID, diversity, multimodality, MM-Dist) are
//! computed in a [`FeatureSpace`] fitted contrastively on the training split.
//! Caption metrics (BLEU, ROUGE-L, CIDEr, soft BERTScore) work on token ids
//! with special tokens removed.

mod features;
mod motion;
mod sweep;
mod text;

pub use features::{motion_features, EvaluatorConfig, FeatureSpace};
pub use motion::{diversity, euclidean, fid, frechet_distance, mean_cov, mm_dist, multimodality, r_precision};
pub use sweep::{latency_sweep, write_latency, write_sweep, SweepRow, LATENCY_HEADER, SWEEP_HEADER};
pub use text::{bleu, content_tokens, lcs_len, rouge_l, soft_bertscore, CiderScorer};

use std::io::Write;
use std::time::Instant;

use crate::corpus::CorpusRecord;
use crate::decode::{make_task_mask, progressive_decode, DecodeConfig, TaskRequest};
use crate::error::{DimoError, Result};
use crate::model::{DenoiserParams, ModelConfig, Real};
use crate::par;
use crate::rng::derive_seed;
use crate::rvq::{decode as rvq_decode, encode, MotionClip, RvqCodebooks, TokenGrid, DEFAULT_FPS};

/// One held-out pair, cropped to what the model can represent.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub caption: Vec<u32>,
    pub grid: TokenGrid,
    /// Ground-truth motion, cut to the frames covered by `grid`.
    pub clip: MotionClip,
}

impl EvalItem {
    pub fn from_record(rec: &CorpusRecord, books: &RvqCodebooks, cfg: &ModelConfig) -> Result<Self> {
        let full = encode(&rec.clip, books)?;
        let length = full.length.min(cfg.max_motion);
        let levels = full.levels.min(cfg.levels);
        let indices = (0..length).flat_map(|t| full.row(t)[..levels].to_vec()).collect();
        let grid = TokenGrid::new(length, levels, indices)?;
        Ok(EvalItem { caption: rec.caption_tokens.clone(), clip: rec.clip.truncated(length * books.ratio), grid })
    }
}

/// Turns decoded motion tokens back into a clip.
pub fn tokens_to_clip(tokens: &[u32], levels: usize, books: &RvqCodebooks) -> Result<MotionClip> {
    if levels == 0 || tokens.len() % levels != 0 {
        return Err(DimoError::Contract("motion tokens are not whole timesteps".into()));
    }
    let grid = TokenGrid::new(tokens.len() / levels, levels, tokens.to_vec())?;
    rvq_decode(&grid, books, DEFAULT_FPS)
}

/// Model outputs to be scored against an evaluation set.
#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub motions: Vec<MotionClip>,
    pub captions: Vec<Vec<u32>>,
    /// Several samples per condition for multimodality.
    pub motion_groups: Vec<Vec<MotionClip>>,
    /// Per-sample T2M wall-clock milliseconds.
    pub latencies_ms: Vec<f64>,
}

impl Generated {
    /// Uses the ground truth as the "generated" side.
    pub fn ground_truth(items: &[EvalItem]) -> Self {
        Generated {
            motions: items.iter().map(|i| i.clip.clone()).collect(),
            captions: items.iter().map(|i| i.caption.clone()).collect(),
            ..Generated::default()
        }
    }
}

/// Decodes motion for every caption; returns tokens and per-sample latency.
pub fn generate_t2m<F: Real>(
    params: &DenoiserParams<F>,
    items: &[EvalItem],
    decode: &DecodeConfig,
) -> Result<Vec<(Vec<u32>, f64)>> {
    let idx: Vec<usize> = (0..items.len()).collect();
    par::map(&idx, |&i| -> Result<(Vec<u32>, f64)> {
        let it = &items[i];
        let cfg = DecodeConfig { seed: derive_seed(decode.seed, i as u64), ..decode.clone() };
        let start = Instant::now();
        let init = make_task_mask(params, &TaskRequest::T2M { caption: it.caption.clone(), length: it.grid.length })?;
        let (out, _) = progressive_decode(params, &init, &cfg)?;
        Ok((out.motion, start.elapsed().as_secs_f64() * 1e3))
    })
    .into_iter()
    .collect()
}

/// Captions every item's ground-truth motion.
pub fn generate_m2t<F: Real>(params: &DenoiserParams<F>, items: &[EvalItem], decode: &DecodeConfig) -> Result<Vec<Vec<u32>>> {
    let idx: Vec<usize> = (0..items.len()).collect();
    par::map(&idx, |&i| -> Result<Vec<u32>> {
        let cfg = DecodeConfig { seed: derive_seed(decode.seed, i as u64), ..decode.clone() };
        let init = make_task_mask(params, &TaskRequest::M2T { motion: items[i].grid.indices.clone() })?;
        Ok(progressive_decode(params, &init, &cfg)?.0.text)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    pub pool: usize,
    pub diversity_subset: usize,
    pub mm_samples: usize,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { pool: 32, diversity_subset: 64, mm_samples: 5, seed: 0 }
    }
}

/// Scores. Metrics that could not be computed (too few samples, no groups)
/// are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub r_precision: Option<[f64; 3]>,
    pub fid: Option<f64>,
    pub diversity: Option<f64>,
    pub multimodality: Option<f64>,
    pub mm_dist: Option<f64>,
    pub bleu1: Option<f64>,
    pub bleu4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub cider: Option<f64>,
    pub soft_bertscore: Option<f64>,
    pub n_t2m: usize,
    pub n_m2t: usize,
}

pub const REPORT_HEADER: &str = "r1,r2,r3,fid,diversity,multimodality,mm_dist,bleu1,bleu4,rougeL,cider,bertscore,n_t2m,n_m2t";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let r = |k: usize| opt(self.r_precision.map(|r| r[k]));
        [
            r(0),
            r(1),
            r(2),
            opt(self.fid),
            opt(self.diversity),
            opt(self.multimodality),
            opt(self.mm_dist),
            opt(self.bleu1),
            opt(self.bleu4),
            opt(self.rouge_l),
            opt(self.cider),
            opt(self.soft_bertscore),
            self.n_t2m.to_string(),
            self.n_m2t.to_string(),
        ]
        .join(",")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        writeln!(w, "{}", self.csv_row())?;
        Ok(())
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Caption-side scores of `captions` against the items' references.
pub fn caption_scores(
    items: &[EvalItem],
    captions: &[Vec<u32>],
    embedding: impl Fn(u32) -> Vec<f64>,
) -> Result<(f64, f64, f64, f64, f64)> {
    if captions.len() != items.len() || items.is_empty() {
        return Err(DimoError::Contract("one caption per evaluation item is required".into()));
    }
    let refs: Vec<Vec<u32>> = items.iter().map(|i| content_tokens(&i.caption)).collect();
    let cands: Vec<Vec<u32>> = captions.iter().map(|c| content_tokens(c)).collect();
    let cider = CiderScorer::fit(&refs.iter().map(|r| vec![r.clone()]).collect::<Vec<_>>(), 4)?;
    let n = items.len() as f64;
    let mut sums = [0.0; 5];
    for (c, r) in cands.iter().zip(&refs) {
        sums[0] += bleu(c, &[r], 1);
        sums[1] += bleu(c, &[r], 4);
        sums[2] += rouge_l(c, r, 1.0);
        sums[3] += cider.score(c, std::slice::from_ref(r))?;
        sums[4] += soft_bertscore(c, r, &embedding);
    }
    Ok((sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n))
}

/// Rows of the text embedding table, for soft BERTScore.
pub fn token_embeddings<F: Real>(params: &DenoiserParams<F>) -> Vec<Vec<f64>> {
    let d = params.config.d_model;
    let i = params.find("text_emb").expect("text embedding tensor");
    params.t(i).chunks(d).map(|row| row.iter().map(|v| v.f64()).collect()).collect()
}

/// Scores generated outputs against `items`.
pub fn score(
    items: &[EvalItem],
    generated: &Generated,
    space: &FeatureSpace,
    embeddings: &[Vec<f64>],
    cfg: &ScoreConfig,
) -> Result<MetricReport> {
    let mut report = MetricReport { n_t2m: generated.motions.len(), n_m2t: generated.captions.len(), ..MetricReport::default() };
    if !generated.motions.is_empty() {
        if generated.motions.len() != items.len() {
            return Err(DimoError::Contract("one generated motion per evaluation item is required".into()));
        }
        let real: Vec<Vec<f64>> = items.iter().map(|i| space.embed_motion(&i.clip)).collect::<Result<_>>()?;
        let gen: Vec<Vec<f64>> = generated.motions.iter().map(|c| space.embed_motion(c)).collect::<Result<_>>()?;
        let text: Vec<Vec<f64>> = items.iter().map(|i| space.embed_text(&i.caption)).collect();
        if gen.len() >= 2 {
            report.fid = Some(fid(&real, &gen)?);
            report.diversity = Some(diversity(&gen, cfg.diversity_subset.min(gen.len()), cfg.seed)?);
        }
        if gen.len() >= cfg.pool {
            let r = r_precision(&text, &gen, cfg.pool, 3)?;
            report.r_precision = Some([r[0], r[1], r[2]]);
        }
        report.mm_dist = Some(mm_dist(&text, &gen)?);
    }
    if !generated.motion_groups.is_empty() {
        let groups: Vec<Vec<Vec<f64>>> = generated
            .motion_groups
            .iter()
            .map(|g| g.iter().map(|c| space.embed_motion(c)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let k = groups.iter().map(Vec::len).min().unwrap_or(0).min(cfg.mm_samples);
        if k >= 2 {
            report.multimodality = Some(multimodality(&groups, k, cfg.seed)?);
        }
    }
    if !generated.captions.is_empty() {
        let emb = |t: u32| embeddings.get(t as usize).cloned().unwrap_or_default();
        let (b1, b4, rl, ci, bs) = caption_scores(items, &generated.captions, emb)?;
        report.bleu1 = Some(b1);
        report.bleu4 = Some(b4);
        report.rouge_l = Some(rl);
        report.cider = Some(ci);
        report.soft_bertscore = (!embeddings.is_empty()).then_some(bs);
    }
    Ok(report)
}

/// Mean of a slice, `None` when empty.
pub fn mean_of(xs: &[f64]) -> Option<f64> {
    mean(xs.iter().copied())
}

/// Median of a slice, `None` when empty.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
