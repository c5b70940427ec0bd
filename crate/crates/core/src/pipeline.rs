//! Glue between the corpus, tokenizer and denoiser stages.

use crate::corpus::{CorpusRecord, Split};
use crate::error::{DimoError, Result};
use crate::metrics::EvalItem;
use crate::model::{ModelConfig, TrainItem};
use crate::par;
use crate::rvq::{encode, frame_stack, mean_reconstruction_mse, train_codebooks, EmaConfig, RvqCodebooks};

/// Records of the given splits, in corpus order.
pub fn select<'a>(records: &'a [CorpusRecord], splits: &[Split]) -> Vec<&'a CorpusRecord> {
    records.iter().filter(|r| splits.contains(&r.split)).collect()
}

/// Every stacked window of every record.
pub fn window_vectors(records: &[&CorpusRecord], ratio: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::new();
    for r in records {
        out.extend(frame_stack(&r.clip, ratio)?);
    }
    Ok(out)
}

pub fn fit_tokenizer(
    records: &[&CorpusRecord],
    layers: usize,
    size: usize,
    ratio: usize,
    ema: &EmaConfig,
) -> Result<RvqCodebooks> {
    let vectors = window_vectors(records, ratio)?;
    if vectors.is_empty() {
        return Err(DimoError::EmptyInput("no motion windows to fit the tokenizer on".into()));
    }
    train_codebooks(&vectors, layers, size, ratio, ema)
}

/// Mean reconstruction MSE of `records` using the first `1..=R` layers.
pub fn depth_mse(records: &[&CorpusRecord], books: &RvqCodebooks) -> Result<Vec<f64>> {
    let clips: Vec<_> = records.iter().map(|r| r.clip.clone()).collect();
    (1..=books.layers).map(|k| mean_reconstruction_mse(&clips, &books.truncated(k))).collect()
}

pub fn train_items(records: &[&CorpusRecord], books: &RvqCodebooks, cfg: &ModelConfig) -> Result<Vec<TrainItem>> {
    par::map(records, |r| TrainItem::new(&r.caption_tokens, &encode(&r.clip, books)?, cfg))
        .into_iter()
        .collect()
}

pub fn eval_items(records: &[&CorpusRecord], books: &RvqCodebooks, cfg: &ModelConfig) -> Result<Vec<EvalItem>> {
    par::map(records, |r| EvalItem::from_record(r, books, cfg)).into_iter().collect()
}
