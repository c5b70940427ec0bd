//! Confidence-guided progressive decoding.
//!
//! Decoding starts from a sequence whose masked cells all sit on one side
//! (caption or motion). Each step runs the denoiser, turns the logits of every
//! still-masked position into a commit distribution, ranks positions by
//! confidence and commits the top `k_s` of them. Committed tokens never
//! change. Every step is recorded in a [`DecodeTrace`] so the exact commit
//! probabilities can be recomputed later under other parameters.

mod engine;
mod tasks;
mod trace;

pub use engine::{
    argmax, commit_distribution, decode_many, progressive_decode, replay_probabilities, step_distributions,
    uses_guidance, Side,
};
pub use tasks::{caption_agreement, make_task_mask, TaskRequest, DEFAULT_CORRECTION_THRESHOLD};
pub use trace::{read_trace, write_trace, DecodeTrace, TraceStep};

use std::str::FromStr;

use crate::error::{DimoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleShape {
    Linear,
    Cosine,
}

impl ScheduleShape {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleShape::Linear => "linear",
            ScheduleShape::Cosine => "cosine",
        }
    }
}

impl FromStr for ScheduleShape {
    type Err = DimoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleShape::Linear),
            "cosine" => Ok(ScheduleShape::Cosine),
            _ => Err(DimoError::Config(format!("unknown schedule shape {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    /// Multiplier on the `[PAD]` probability when decoding captions.
    pub pad_factor: f64,
    pub shape: ScheduleShape,
    /// 0 commits the argmax; otherwise tokens are sampled from softmax(logits / T).
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            steps: 20,
            cfg_scale: 3.0,
            pad_factor: 0.8,
            shape: ScheduleShape::Cosine,
            temperature: 0.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(DimoError::Config("decode steps must be ≥ 1".into()));
        }
        if !(self.cfg_scale >= 0.0) || !self.cfg_scale.is_finite() {
            return Err(DimoError::Config("cfg_scale must be finite and ≥ 0".into()));
        }
        if !(self.pad_factor > 0.0 && self.pad_factor <= 1.0) {
            return Err(DimoError::Config("pad_factor must lie in (0, 1]".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(DimoError::Config("temperature must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Number of positions committed at each of `steps` steps.
///
/// Linear splits `total` as evenly as possible, larger parts first. Cosine
/// keeps `round(total · cos(π s / 2S))` positions masked after step `s`; the
/// last step commits whatever remains.
pub fn unmask_schedule(total: usize, steps: usize, shape: ScheduleShape) -> Vec<usize> {
    assert!(steps >= 1, "schedule needs at least one step");
    match shape {
        ScheduleShape::Linear => {
            let (base, extra) = (total / steps, total % steps);
            (0..steps).map(|s| base + usize::from(s < extra)).collect()
        }
        ScheduleShape::Cosine => {
            let remaining = |s: usize| -> usize {
                if s >= steps {
                    0
                } else {
                    let frac = (std::f64::consts::PI * s as f64 / (2.0 * steps as f64)).cos();
                    ((total as f64 * frac).round() as usize).min(total)
                }
            };
            (1..=steps).map(|s| remaining(s - 1) - remaining(s)).collect()
        }
    }
}

/// `uncond + scale · (cond − uncond)`, elementwise. Scale 1 returns `cond` unchanged.
pub fn guided_logits(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(DimoError::Contract(format!(
            "guidance shapes differ: {} vs {}",
            cond.len(),
            uncond.len()
        )));
    }
    if scale == 1.0 {
        return Ok(cond.to_vec());
    }
    Ok(cond.iter().zip(uncond).map(|(&c, &u)| u + scale * (c - u)).collect())
}

/// Largest probability of a distribution.
pub fn confidence(probs: &[f64]) -> Result<f64> {
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(DimoError::Numeric("non-finite probability".into()));
    }
    Ok(probs.iter().copied().fold(0.0, f64::max))
}

/// Scales entry `pad` by `factor` and renormalizes.
pub fn down_weight_pad(probs: &mut [f64], pad: usize, factor: f64) {
    probs[pad] *= factor;
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= s);
}
