use super::{down_weight_pad, unmask_schedule, DecodeConfig, DecodeTrace, TraceStep};
use crate::corpus::{NULL, PAD};
use crate::error::{DimoError, Result};
use crate::model::ops::softmax_f64;
use crate::model::{forward, DenoiserParams, JointSequence, Logits, Real};
use crate::par;
use crate::rng::{derive_seed, Rng};

/// Which half of the joint sequence is being generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Text,
    Motion,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Text => "text",
            Side::Motion => "motion",
        }
    }

    /// Masked positions (caption slots or timesteps), ascending.
    pub fn masked_positions(self, seq: &JointSequence) -> Vec<usize> {
        let flags = match self {
            Side::Text => &seq.text_mask,
            Side::Motion => &seq.motion_mask,
        };
        flags.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

pub(crate) fn side_of(seq: &JointSequence) -> Result<Side> {
    match (seq.masked_text() > 0, seq.masked_timesteps() > 0) {
        (true, false) => Ok(Side::Text),
        (false, true) => Ok(Side::Motion),
        (true, true) => Err(DimoError::Contract("masks on both caption and motion".into())),
        (false, false) => Err(DimoError::NoOp("nothing is masked".into())),
    }
}

/// Guidance runs when generating motion under a real (non-`[NULL]`) caption
/// with a scale other than 1.
pub fn uses_guidance(seq: &JointSequence, side: Side, cfg: &DecodeConfig) -> bool {
    side == Side::Motion && cfg.cfg_scale != 1.0 && seq.text.iter().any(|&t| t != NULL)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Commit-time distribution of one cell: optional guidance, temperature,
/// then `[PAD]` down-weighting for caption cells.
pub fn commit_distribution<F: Real>(
    cond: &[F],
    uncond: Option<&[F]>,
    side: Side,
    cfg: &DecodeConfig,
) -> Result<Vec<f64>> {
    let t = if cfg.temperature > 0.0 { cfg.temperature } else { 1.0 };
    let z: Vec<f64> = match uncond {
        Some(u) => cond
            .iter()
            .zip(u)
            .map(|(&c, &u)| (u.f64() + cfg.cfg_scale * (c.f64() - u.f64())) / t)
            .collect(),
        None => cond.iter().map(|&c| c.f64() / t).collect(),
    };
    let mut p = softmax_f64(&z);
    if side == Side::Text && cfg.pad_factor != 1.0 {
        down_weight_pad(&mut p, PAD as usize, cfg.pad_factor);
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(DimoError::Numeric("non-finite commit distribution".into()));
    }
    Ok(p)
}

fn logits_for<F: Real>(
    params: &DenoiserParams<F>,
    state: &JointSequence,
    side: Side,
    cfg: &DecodeConfig,
) -> Result<(Logits<F>, Option<Logits<F>>)> {
    let cond = forward(params, &state.text, &state.motion)?;
    let uncond = if uses_guidance(state, side, cfg) {
        let null = vec![NULL; state.text.len()];
        Some(forward(params, &null, &state.motion)?)
    } else {
        None
    };
    Ok((cond, uncond))
}

/// Commit distributions of `positions` in `state`: one per caption slot, or
/// one per RVQ level for each timestep.
pub fn step_distributions<F: Real>(
    params: &DenoiserParams<F>,
    state: &JointSequence,
    side: Side,
    positions: &[usize],
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let (cond, uncond) = logits_for(params, state, side, cfg)?;
    positions
        .iter()
        .map(|&pos| match side {
            Side::Text => Ok(vec![commit_distribution(cond.text_row(pos), None, side, cfg)?]),
            Side::Motion => (0..state.levels)
                .map(|l| commit_distribution(cond.motion_row(pos, l), uncond.as_ref().map(|u| u.motion_row(pos, l)), side, cfg))
                .collect(),
        })
        .collect()
}

fn commit(state: &mut JointSequence, side: Side, pos: usize, values: &[u32]) {
    match side {
        Side::Text => {
            state.text[pos] = values[0];
            state.text_mask[pos] = false;
        }
        Side::Motion => {
            let r = state.levels;
            state.motion[pos * r..(pos + 1) * r].copy_from_slice(values);
            state.motion_mask[pos] = false;
        }
    }
}

/// Runs the progressive decoder from `init`.
pub fn progressive_decode<F: Real>(
    params: &DenoiserParams<F>,
    init: &JointSequence,
    cfg: &DecodeConfig,
) -> Result<(JointSequence, DecodeTrace)> {
    cfg.validate()?;
    let side = side_of(init)?;
    let mut rng = Rng::new(cfg.seed);
    let mut state = init.clone();
    let total = side.masked_positions(init).len();
    let mut steps = Vec::with_capacity(cfg.steps);
    for k in unmask_schedule(total, cfg.steps, cfg.shape) {
        let masked = side.masked_positions(&state);
        if k == 0 {
            steps.push(TraceStep { masked_before: masked, committed: vec![], values: vec![], probs: vec![] });
            continue;
        }
        let dists = step_distributions(params, &state, side, &masked, cfg)?;
        let conf: Vec<f64> = dists
            .iter()
            .map(|levels| levels.iter().map(|d| d.iter().copied().fold(0.0, f64::max)).product())
            .collect();
        let mut order: Vec<usize> = (0..masked.len()).collect();
        // stable sort keeps ascending position order among equal confidences
        order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));
        let mut chosen: Vec<usize> = order[..k].to_vec();
        chosen.sort_unstable();
        let mut step = TraceStep { masked_before: masked.clone(), committed: Vec::with_capacity(k), values: vec![], probs: vec![] };
        for idx in chosen {
            let mut vals = Vec::with_capacity(dists[idx].len());
            for d in &dists[idx] {
                let v = if cfg.temperature > 0.0 { rng.categorical(d) } else { argmax(d) };
                vals.push(v as u32);
                step.probs.push(d[v]);
            }
            commit(&mut state, side, masked[idx], &vals);
            step.committed.push(masked[idx]);
            step.values.extend(vals);
        }
        steps.push(step);
    }
    let trace = DecodeTrace { side, initial: init.clone(), config: cfg.clone(), steps };
    Ok((state, trace))
}

/// Decodes each request with seed `derive_seed(cfg.seed, i)`, in parallel.
pub fn decode_many<F: Real>(
    params: &DenoiserParams<F>,
    inits: &[JointSequence],
    cfg: &DecodeConfig,
) -> Vec<Result<(JointSequence, DecodeTrace)>> {
    let seeded: Vec<(usize, &JointSequence)> = inits.iter().enumerate().collect();
    par::map(&seeded, |&(i, init)| {
        let c = DecodeConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.clone() };
        progressive_decode(params, init, &c)
    })
}

/// Recomputes each step's commit probabilities under `params` by replaying
/// the recorded states.
pub fn replay_probabilities<F: Real>(params: &DenoiserParams<F>, trace: &DecodeTrace) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(trace.steps.len());
    for (state, step) in trace.states()?.iter().zip(&trace.steps) {
        if step.committed.is_empty() {
            out.push(vec![]);
            continue;
        }
        let dists = step_distributions(params, state, trace.side, &step.committed, &trace.config)?;
        let per = trace.cells_per_position();
        let mut probs = Vec::with_capacity(step.values.len());
        for (j, levels) in dists.iter().enumerate() {
            for (l, d) in levels.iter().enumerate() {
                probs.push(d[step.values[j * per + l] as usize]);
            }
        }
        out.push(probs);
    }
    Ok(out)
}
