use std::ops::Range;

use crate::corpus::{MASK, NULL};
use crate::error::{DimoError, Result};
use crate::model::ops::softmax_f64;
use crate::model::{forward, DenoiserParams, JointSequence, Real, Task};

/// Caption slots whose model probability falls below this are re-decoded.
pub const DEFAULT_CORRECTION_THRESHOLD: f64 = 0.2;

/// What to generate and what to keep.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskRequest {
    /// Generate `length` motion timesteps for a caption.
    T2M { caption: Vec<u32>, length: usize },
    /// Caption a `T × levels` motion grid.
    M2T { motion: Vec<u32> },
    /// Regenerate every timestep outside `keep`, with no caption.
    Inbetween { motion: Vec<u32>, keep: Vec<Range<usize>> },
    /// Append `append` timesteps after `prefix`, guided by `caption`.
    Continue { prefix: Vec<u32>, caption: Vec<u32>, append: usize },
    /// Re-decode caption slots that disagree with the motion.
    CaptionCorrect { caption: Vec<u32>, motion: Vec<u32>, threshold: f64 },
}

impl TaskRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskRequest::T2M { .. } => "t2m",
            TaskRequest::M2T { .. } => "m2t",
            TaskRequest::Inbetween { .. } => "m2m_inbetween",
            TaskRequest::Continue { .. } => "m2m_continue",
            TaskRequest::CaptionCorrect { .. } => "caption_correct",
        }
    }
}

fn check_caption<F: Real>(params: &DenoiserParams<F>, caption: &[u32]) -> Result<()> {
    if caption.len() != params.config.max_text {
        return Err(DimoError::Contract(format!(
            "caption has {} slots, model expects {}",
            caption.len(),
            params.config.max_text
        )));
    }
    Ok(())
}

fn check_motion<F: Real>(params: &DenoiserParams<F>, motion: &[u32]) -> Result<usize> {
    let r = params.config.levels;
    if motion.len() % r != 0 {
        return Err(DimoError::Contract("motion tokens are not a whole number of timesteps".into()));
    }
    let t = motion.len() / r;
    if t > params.config.max_motion {
        return Err(DimoError::Contract(format!("{t} timesteps exceed the model limit")));
    }
    Ok(t)
}

/// Probability the model assigns to each current caption token when that slot
/// alone is masked and the motion is visible.
pub fn caption_agreement<F: Real>(params: &DenoiserParams<F>, caption: &[u32], motion: &[u32]) -> Result<Vec<f64>> {
    check_caption(params, caption)?;
    check_motion(params, motion)?;
    (0..caption.len())
        .map(|i| {
            let mut text = caption.to_vec();
            text[i] = MASK;
            let logits = forward(params, &text, motion)?;
            Ok(softmax_f64(logits.text_row(i))[caption[i] as usize])
        })
        .collect()
}

/// Builds the masked starting sequence for a request. Errors with
/// [`DimoError::NoOp`] when nothing would be masked.
pub fn make_task_mask<F: Real>(params: &DenoiserParams<F>, req: &TaskRequest) -> Result<JointSequence> {
    let c = &params.config;
    let r = c.levels;
    let mask_code = c.mask_code();
    match req {
        TaskRequest::T2M { caption, length } => {
            check_caption(params, caption)?;
            if *length == 0 {
                return Err(DimoError::NoOp("zero-length motion requested".into()));
            }
            if *length > c.max_motion {
                return Err(DimoError::Contract(format!("{length} timesteps exceed the model limit")));
            }
            Ok(JointSequence {
                text: caption.clone(),
                motion: vec![mask_code; length * r],
                levels: r,
                text_mask: vec![false; caption.len()],
                motion_mask: vec![true; *length],
                task: Task::T2M,
            })
        }
        TaskRequest::M2T { motion } => {
            let t = check_motion(params, motion)?;
            Ok(JointSequence {
                text: vec![MASK; c.max_text],
                motion: motion.clone(),
                levels: r,
                text_mask: vec![true; c.max_text],
                motion_mask: vec![false; t],
                task: Task::M2T,
            })
        }
        TaskRequest::Inbetween { motion, keep } => {
            let t = check_motion(params, motion)?;
            let mut mask = vec![true; t];
            for range in keep {
                for m in mask.iter_mut().take(range.end.min(t)).skip(range.start) {
                    *m = false;
                }
            }
            if !mask.iter().any(|&m| m) {
                return Err(DimoError::NoOp("every timestep is kept".into()));
            }
            let mut motion = motion.clone();
            for (s, &m) in mask.iter().enumerate() {
                if m {
                    motion[s * r..(s + 1) * r].iter_mut().for_each(|v| *v = mask_code);
                }
            }
            Ok(JointSequence {
                text: vec![NULL; c.max_text],
                motion,
                levels: r,
                text_mask: vec![false; c.max_text],
                motion_mask: mask,
                task: Task::M2M,
            })
        }
        TaskRequest::Continue { prefix, caption, append } => {
            check_caption(params, caption)?;
            let t = check_motion(params, prefix)?;
            if *append == 0 {
                return Err(DimoError::NoOp("nothing to append".into()));
            }
            if t + append > c.max_motion {
                return Err(DimoError::Contract(format!("{} timesteps exceed the model limit", t + append)));
            }
            let mut motion = prefix.clone();
            motion.extend(std::iter::repeat(mask_code).take(append * r));
            let mut mask = vec![false; t];
            mask.extend(std::iter::repeat(true).take(*append));
            Ok(JointSequence {
                text: caption.clone(),
                motion,
                levels: r,
                text_mask: vec![false; caption.len()],
                motion_mask: mask,
                task: Task::T2M,
            })
        }
        TaskRequest::CaptionCorrect { caption, motion, threshold } => {
            let t = check_motion(params, motion)?;
            let agreement = caption_agreement(params, caption, motion)?;
            let mask: Vec<bool> = agreement.iter().map(|&p| p < *threshold).collect();
            if !mask.iter().any(|&m| m) {
                return Err(DimoError::NoOp("caption already agrees with the motion".into()));
            }
            let text = caption.iter().zip(&mask).map(|(&id, &m)| if m { MASK } else { id }).collect();
            Ok(JointSequence {
                text,
                motion: motion.clone(),
                levels: r,
                text_mask: mask,
                motion_mask: vec![false; t],
                task: Task::M2T,
            })
        }
    }
}
