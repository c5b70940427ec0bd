//! Decode traces and their line-delimited text form.
//!
//! ```text
//! dimo-trace v1
//! side motion
//! task t2m
//! levels 4
//! config steps=20 cfg_scale=3 pad_factor=0.8 shape=cosine temperature=1 seed=7
//! text 5 9 20 0 ...
//! motion 64 64 ...
//! text_mask 0 0 ...
//! motion_mask 1 1 ...
//! step 0 masked=0,1,2 committed=1 values=3,17,0,9 probs=0.41,0.2,0.9,0.33
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so reading a trace
//! back gives bit-identical probabilities.

use std::io::{BufRead, Write};

use super::{engine::Side, DecodeConfig, ScheduleShape};
use crate::error::{DimoError, Result};
use crate::model::{JointSequence, Task};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// Masked positions before this step, ascending.
    pub masked_before: Vec<usize>,
    /// Positions committed at this step, ascending.
    pub committed: Vec<usize>,
    /// Committed token ids; `levels` per position for motion, one for text.
    pub values: Vec<u32>,
    /// Probability of each committed token under its commit distribution.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub side: Side,
    pub initial: JointSequence,
    pub config: DecodeConfig,
    pub steps: Vec<TraceStep>,
}

impl DecodeTrace {
    pub fn cells_per_position(&self) -> usize {
        match self.side {
            Side::Text => 1,
            Side::Motion => self.initial.levels,
        }
    }

    /// Sequence state before each step.
    pub fn states(&self) -> Result<Vec<JointSequence>> {
        let per = self.cells_per_position();
        let mut state = self.initial.clone();
        let mut out = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            out.push(state.clone());
            if step.values.len() != step.committed.len() * per {
                return Err(DimoError::CorruptInput("trace step has mismatched values".into()));
            }
            for (j, &pos) in step.committed.iter().enumerate() {
                let vals = &step.values[j * per..(j + 1) * per];
                match self.side {
                    Side::Text => {
                        if pos >= state.text.len() || !state.text_mask[pos] {
                            return Err(DimoError::CorruptInput(format!("trace commits text slot {pos} twice")));
                        }
                        state.text[pos] = vals[0];
                        state.text_mask[pos] = false;
                    }
                    Side::Motion => {
                        if pos >= state.motion_len() || !state.motion_mask[pos] {
                            return Err(DimoError::CorruptInput(format!("trace commits timestep {pos} twice")));
                        }
                        state.motion[pos * per..(pos + 1) * per].copy_from_slice(vals);
                        state.motion_mask[pos] = false;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Final decoded sequence.
    pub fn output(&self) -> Result<JointSequence> {
        let mut states = self.states()?;
        let mut last = states.pop().unwrap_or_else(|| self.initial.clone());
        if let Some(step) = self.steps.last() {
            let per = self.cells_per_position();
            for (j, &pos) in step.committed.iter().enumerate() {
                let vals = &step.values[j * per..(j + 1) * per];
                match self.side {
                    Side::Text => {
                        last.text[pos] = vals[0];
                        last.text_mask[pos] = false;
                    }
                    Side::Motion => {
                        last.motion[pos * per..(pos + 1) * per].copy_from_slice(vals);
                        last.motion_mask[pos] = false;
                    }
                }
            }
        }
        Ok(last)
    }

    /// Σ log of recorded commit probabilities.
    pub fn recorded_logprob(&self) -> f64 {
        self.steps.iter().flat_map(|s| &s.probs).map(|p| p.ln()).sum()
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn join_space<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_trace<W: Write>(trace: &DecodeTrace, mut w: W) -> Result<()> {
    let c = &trace.config;
    let s = &trace.initial;
    writeln!(w, "dimo-trace v1")?;
    writeln!(w, "side {}", trace.side.name())?;
    writeln!(w, "task {}", s.task)?;
    writeln!(w, "levels {}", s.levels)?;
    writeln!(
        w,
        "config steps={} cfg_scale={} pad_factor={} shape={} temperature={} seed={}",
        c.steps,
        c.cfg_scale,
        c.pad_factor,
        c.shape.name(),
        c.temperature,
        c.seed
    )?;
    writeln!(w, "text {}", join_space(&s.text))?;
    writeln!(w, "motion {}", join_space(&s.motion))?;
    let bits = |m: &[bool]| m.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(" ");
    writeln!(w, "text_mask {}", bits(&s.text_mask))?;
    writeln!(w, "motion_mask {}", bits(&s.motion_mask))?;
    for (i, st) in trace.steps.iter().enumerate() {
        writeln!(
            w,
            "step {i} masked={} committed={} values={} probs={}",
            join(&st.masked_before),
            join(&st.committed),
            join(&st.values),
            join(&st.probs)
        )?;
    }
    writeln!(w, "end")?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> DimoError {
    DimoError::Format(format!("trace: {}", msg.into()))
}

fn parse_list<T: std::str::FromStr>(s: &str, sep: char) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(sep).map(|x| x.parse::<T>().map_err(|_| bad(format!("bad value {x:?}")))).collect()
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
        .ok_or_else(|| bad(format!("expected {key:?} line")))
}

/// Reads one trace; returns `None` at end of input.
pub fn read_trace<R: BufRead>(r: &mut R) -> Result<Option<DecodeTrace>> {
    let mut lines = Vec::new();
    let mut buf = String::new();
    loop {
        buf.clear();
        if r.read_line(&mut buf)? == 0 {
            if lines.is_empty() {
                return Ok(None);
            }
            return Err(bad("missing end line"));
        }
        let line = buf.trim_end_matches(['\n', '\r']).to_string();
        if lines.is_empty() && line.is_empty() {
            continue;
        }
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.len() < 9 || lines[0] != "dimo-trace v1" {
        return Err(bad("bad header"));
    }
    let side = match field(&lines[1], "side")? {
        "text" => Side::Text,
        "motion" => Side::Motion,
        other => return Err(bad(format!("unknown side {other:?}"))),
    };
    let task: Task = field(&lines[2], "task")?.parse()?;
    let levels: usize = field(&lines[3], "levels")?.parse().map_err(|_| bad("bad levels"))?;
    let mut config = DecodeConfig::default();
    for kv in field(&lines[4], "config")?.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("bad config entry"))?;
        let num = || v.parse::<f64>().map_err(|_| bad(format!("bad {k}")));
        match k {
            "steps" => config.steps = v.parse().map_err(|_| bad("bad steps"))?,
            "cfg_scale" => config.cfg_scale = num()?,
            "pad_factor" => config.pad_factor = num()?,
            "shape" => config.shape = v.parse::<ScheduleShape>()?,
            "temperature" => config.temperature = num()?,
            "seed" => config.seed = v.parse().map_err(|_| bad("bad seed"))?,
            _ => return Err(bad(format!("unknown config key {k:?}"))),
        }
    }
    let text: Vec<u32> = parse_list(field(&lines[5], "text")?, ' ')?;
    let motion: Vec<u32> = parse_list(field(&lines[6], "motion")?, ' ')?;
    let flags = |s: &str| -> Result<Vec<bool>> {
        parse_list::<u8>(s, ' ')?.into_iter().map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(bad("mask flag must be 0 or 1")),
        }).collect()
    };
    let text_mask = flags(field(&lines[7], "text_mask")?)?;
    let motion_mask = flags(field(&lines[8], "motion_mask")?)?;
    if levels == 0 || motion.len() != motion_mask.len() * levels || text.len() != text_mask.len() {
        return Err(bad("sequence shape mismatch"));
    }
    let initial = JointSequence { text, motion, levels, text_mask, motion_mask, task };
    let mut steps = Vec::new();
    for (i, line) in lines[9..].iter().enumerate() {
        let rest = field(line, "step")?;
        let mut parts = rest.split(' ');
        let idx: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad step index"))?;
        if idx != i {
            return Err(bad("steps out of order"));
        }
        let mut get = |key: &str| -> Result<String> {
            let p = parts.next().ok_or_else(|| bad("short step line"))?;
            p.strip_prefix(key).map(str::to_string).ok_or_else(|| bad(format!("expected {key}")))
        };
        let masked_before = parse_list(&get("masked=")?, ',')?;
        let committed = parse_list(&get("committed=")?, ',')?;
        let values = parse_list(&get("values=")?, ',')?;
        let probs = parse_list(&get("probs=")?, ',')?;
        steps.push(TraceStep { masked_before, committed, values, probs });
    }
    let trace = DecodeTrace { side, initial, config, steps };
    trace.states()?;
    Ok(Some(trace))
}
