use std::fmt;
use std::str::FromStr;

use super::{MaskSchedule, ModelConfig, TaskRatios};
use crate::corpus::{MASK, NULL};
use crate::error::{DimoError, Result};
use crate::rng::Rng;
use crate::rvq::TokenGrid;

/// Training/inference direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Caption visible, motion masked.
    T2M,
    /// Caption replaced by `[NULL]`, motion partially masked.
    M2M,
    /// Motion visible, caption masked.
    M2T,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::T2M, Task::M2M, Task::M2T];

    pub fn name(self) -> &'static str {
        match self {
            Task::T2M => "t2m",
            Task::M2M => "m2m",
            Task::M2T => "m2t",
        }
    }

    pub fn masks_text(self) -> bool {
        self == Task::M2T
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = DimoError;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| DimoError::Config(format!("unknown task {s:?}")))
    }
}

/// A caption and a motion-token grid laid out for the denoiser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSequence {
    /// `max_text` ids.
    pub text: Vec<u32>,
    /// `T × levels`, timestep-major.
    pub motion: Vec<u32>,
    pub levels: usize,
    pub text_mask: Vec<bool>,
    /// One flag per timestep; a masked timestep masks all levels.
    pub motion_mask: Vec<bool>,
    pub task: Task,
}

impl JointSequence {
    /// Unmasked sequence. For M2M the caption is replaced by `[NULL]`.
    pub fn new(text: &[u32], motion: &[u32], levels: usize, task: Task) -> Result<Self> {
        if levels == 0 || motion.len() % levels != 0 {
            return Err(DimoError::Contract("motion tokens are not a whole number of timesteps".into()));
        }
        let text = if task == Task::M2M { vec![NULL; text.len()] } else { text.to_vec() };
        let t = motion.len() / levels;
        Ok(JointSequence {
            text_mask: vec![false; text.len()],
            text,
            motion: motion.to_vec(),
            levels,
            motion_mask: vec![false; t],
            task,
        })
    }

    pub fn from_grid(text: &[u32], grid: &TokenGrid, task: Task) -> Result<Self> {
        Self::new(text, &grid.indices, grid.levels, task)
    }

    pub fn motion_len(&self) -> usize {
        self.motion_mask.len()
    }

    pub fn masked_text(&self) -> usize {
        self.text_mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_timesteps(&self) -> usize {
        self.motion_mask.iter().filter(|&&m| m).count()
    }
}

/// Replaces masked caption slots with `[MASK]` and every level of a masked
/// timestep with `mask_code`. The mask must respect the task: T2M and M2M
/// mask motion only, M2T masks text only.
pub fn corrupt(seq: &JointSequence, text_mask: &[bool], motion_mask: &[bool], mask_code: u32) -> Result<JointSequence> {
    if text_mask.len() != seq.text.len() || motion_mask.len() != seq.motion_len() {
        return Err(DimoError::Contract("mask length does not match sequence".into()));
    }
    let any_text = text_mask.iter().any(|&m| m);
    let any_motion = motion_mask.iter().any(|&m| m);
    match seq.task {
        Task::T2M | Task::M2M if any_text => {
            return Err(DimoError::Contract(format!("{} must not mask text", seq.task)));
        }
        Task::M2T if any_motion => {
            return Err(DimoError::Contract("m2t must not mask motion".into()));
        }
        _ => {}
    }
    let mut out = seq.clone();
    for (i, &m) in text_mask.iter().enumerate() {
        if m {
            out.text[i] = MASK;
            out.text_mask[i] = true;
        }
    }
    for (t, &m) in motion_mask.iter().enumerate() {
        if m {
            for l in 0..seq.levels {
                out.motion[t * seq.levels + l] = mask_code;
            }
            out.motion_mask[t] = true;
        }
    }
    Ok(out)
}

/// Masking rate for a uniform draw `u`.
pub fn mask_rate(schedule: MaskSchedule, u: f64) -> f64 {
    match schedule {
        MaskSchedule::Linear => u,
        MaskSchedule::Cosine => (std::f64::consts::FRAC_PI_2 * u).cos(),
        MaskSchedule::Fixed(r) => r,
    }
}

/// Independent Bernoulli(`rate`) flags.
pub fn sample_mask_with_rate(len: usize, rate: f64, rng: &mut Rng) -> Vec<bool> {
    (0..len).map(|_| rng.bernoulli(rate)).collect()
}

/// Draws a rate from `schedule`, then a mask at that rate.
pub fn sample_mask(len: usize, schedule: MaskSchedule, rng: &mut Rng) -> Vec<bool> {
    let rate = mask_rate(schedule, rng.uniform());
    sample_mask_with_rate(len, rate, rng)
}

pub fn assign_task(ratios: &TaskRatios, rng: &mut Rng) -> Task {
    Task::ALL[rng.categorical(&[ratios.t2m, ratios.m2m, ratios.m2t])]
}

/// A corrupted sequence with the clean tokens it should reconstruct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: JointSequence,
    pub target_text: Vec<u32>,
    pub target_motion: Vec<u32>,
}

/// A paired caption and motion grid, cropped to the model's limits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainItem {
    pub text: Vec<u32>,
    pub motion: Vec<u32>,
    pub levels: usize,
}

impl TrainItem {
    pub fn new(text: &[u32], grid: &TokenGrid, cfg: &ModelConfig) -> Result<Self> {
        if text.len() != cfg.max_text {
            return Err(DimoError::Contract(format!("caption has {} ids, model expects {}", text.len(), cfg.max_text)));
        }
        if grid.levels < cfg.levels {
            return Err(DimoError::Contract(format!("grid has {} levels, model needs {}", grid.levels, cfg.levels)));
        }
        let t = grid.length.min(cfg.max_motion);
        let mut motion = Vec::with_capacity(t * cfg.levels);
        for s in 0..t {
            for l in 0..cfg.levels {
                motion.push(grid.indices[s * grid.levels + l]);
            }
        }
        Ok(TrainItem { text: text.to_vec(), motion, levels: cfg.levels })
    }

    pub fn motion_len(&self) -> usize {
        self.motion.len() / self.levels
    }
}
