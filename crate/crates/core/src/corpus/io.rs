//! Line-delimited corpus file.
//!
//! One record per line, tab-separated: id, split, caption, space-separated
//! primitive names, fps, frames, then `frames × channels` motion values, each
//! in its own field, printed with 9 significant digits.

use std::io::{BufRead, Write};

use super::{CorpusRecord, PrimitiveKind, Split, TextVocab};
use crate::error::{DimoError, Result};
use crate::rvq::{MotionClip, DEFAULT_CHANNELS};

pub fn format_value(v: f32) -> String {
    format!("{v:.8e}")
}

pub fn write_corpus<W: Write>(records: &[CorpusRecord], mut w: W) -> Result<()> {
    for r in records {
        let prims: Vec<&str> = r.primitives.iter().map(|p| p.name()).collect();
        write!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.split.name(),
            r.caption_text,
            prims.join(" "),
            r.clip.fps,
            r.clip.frames()
        )?;
        for &v in &r.clip.data {
            write!(w, "\t{}", format_value(v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R, vocab: &TextVocab, max_caption_len: usize) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| DimoError::Format(format!("corpus line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 6 {
            return Err(bad("expected at least 6 fields"));
        }
        let split: Split = fields[1].parse()?;
        let caption_text = fields[2].to_string();
        let primitives = fields[3]
            .split_whitespace()
            .map(str::parse::<PrimitiveKind>)
            .collect::<Result<Vec<_>>>()?;
        let fps: f32 = fields[4].parse().map_err(|_| bad("bad fps"))?;
        let frames: usize = fields[5].parse().map_err(|_| bad("bad frame count"))?;
        let values = &fields[6..];
        if values.len() != frames * DEFAULT_CHANNELS {
            return Err(bad(&format!(
                "expected {} motion values, found {}",
                frames * DEFAULT_CHANNELS,
                values.len()
            )));
        }
        let data = values
            .iter()
            .map(|s| s.parse::<f32>().map_err(|_| bad("bad motion value")))
            .collect::<Result<Vec<_>>>()?;
        let caption_tokens = vocab.tokenize(&caption_text, max_caption_len)?;
        out.push(CorpusRecord {
            id: fields[0].to_string(),
            split,
            caption_text,
            caption_tokens,
            primitives,
            clip: MotionClip::new(DEFAULT_CHANNELS, fps, data)?,
        });
    }
    Ok(out)
}
