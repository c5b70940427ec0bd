use std::io::Write;

use super::{
    caption_scores, generate_m2t, generate_t2m, median, score, tokens_to_clip, token_embeddings, EvalItem,
    FeatureSpace, Generated, ScoreConfig,
};
use crate::corpus::TextVocab;
use crate::decode::DecodeConfig;
use crate::error::Result;
use crate::grpo::{verb_match, MotionCaptioner};
use crate::model::{DenoiserParams, Real};
use crate::rvq::RvqCodebooks;

pub const SWEEP_HEADER: &str = "steps,fid,r1,r2,r3,bleu1,bleu4,rougeL,cider,verb_recovery,caption_verbs";
pub const LATENCY_HEADER: &str = "steps,latency_ms";

/// Quality and cost at one step count.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub steps: usize,
    /// Median per-sample T2M decode time.
    pub latency_ms: f64,
    pub fid: f64,
    pub r_precision: Option<[f64; 3]>,
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    /// Mean verb overlap between each prompt and the caption `captioner`
    /// gives its generated motion.
    pub verb_recovery: f64,
    /// Mean verb overlap between each reference caption and the M2T caption
    /// decoded at this step count.
    pub caption_verbs: f64,
}

/// Decodes the evaluation set at each step count and scores it.
#[allow(clippy::too_many_arguments)]
pub fn latency_sweep<F: Real>(
    params: &DenoiserParams<F>,
    books: &RvqCodebooks,
    space: &FeatureSpace,
    vocab: &TextVocab,
    captioner: &dyn MotionCaptioner,
    items: &[EvalItem],
    steps_list: &[usize],
    decode: &DecodeConfig,
) -> Result<Vec<SweepRow>> {
    let embeddings = token_embeddings(params);
    let levels = params.config.levels;
    let mut rows = Vec::with_capacity(steps_list.len());
    for &steps in steps_list {
        let cfg = DecodeConfig { steps, ..decode.clone() };
        let t2m = generate_t2m(params, items, &cfg)?;
        let latencies: Vec<f64> = t2m.iter().map(|(_, ms)| *ms).collect();
        let motions = t2m.iter().map(|(m, _)| tokens_to_clip(m, levels, books)).collect::<Result<Vec<_>>>()?;
        let gen = Generated { motions, ..Generated::default() };
        let report = score(items, &gen, space, &embeddings, &ScoreConfig::default())?;
        let captions = generate_m2t(params, items, &cfg)?;
        let (bleu1, bleu4, rouge_l, cider, _) =
            caption_scores(items, &captions, |t| embeddings.get(t as usize).cloned().unwrap_or_default())?;
        let mut verbs = 0.0;
        for ((m, _), it) in t2m.iter().zip(items) {
            verbs += verb_match(&captioner.caption(m)?, &it.caption, vocab);
        }
        let caption_verbs =
            items.iter().zip(&captions).map(|(it, c)| verb_match(c, &it.caption, vocab)).sum::<f64>();
        rows.push(SweepRow {
            steps,
            latency_ms: median(&latencies).unwrap_or(0.0),
            fid: report.fid.unwrap_or(f64::NAN),
            r_precision: report.r_precision,
            bleu1,
            bleu4,
            rouge_l,
            cider,
            verb_recovery: verbs / items.len().max(1) as f64,
            caption_verbs: caption_verbs / items.len().max(1) as f64,
        });
    }
    Ok(rows)
}

/// Quality columns only; these are deterministic given the seed.
pub fn write_sweep<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let rp = |k: usize| r.r_precision.map(|v| v[k].to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.steps,
            r.fid,
            rp(0),
            rp(1),
            rp(2),
            r.bleu1,
            r.bleu4,
            r.rouge_l,
            r.cider,
            r.verb_recovery,
            r.caption_verbs
        )?;
    }
    Ok(())
}

/// Wall-clock columns, kept apart from the reproducible quality table.
pub fn write_latency<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{LATENCY_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{}", r.steps, r.latency_ms)?;
    }
    Ok(())
}
