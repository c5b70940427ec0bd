//! Group-relative policy optimization on top of the progressive decoder.
//!
//! For each prompt, `G` candidates are sampled from a snapshot of the policy
//! (`θ_old`) and scored. Rewards are normalized within the group into
//! advantages. The likelihood of a candidate is its decode trajectory's
//! likelihood: the sum of log commit probabilities, recomputed by replaying
//! the recorded step states under the current parameters. The update ascends
//! the clipped surrogate minus `β` times the mean per-cell KL to a frozen
//! reference snapshot.

mod replay;
mod reward;

pub use replay::{kl_divergence, replay, sequence_logprob, Replay};
pub use reward::{
    cosine, length_penalty, reward_m2t, reward_t2m, verb_match, CaptionEmbedder, CaptionVector, FrozenCaptioner, Gram,
    MotionCaptioner, RewardConfig, RewardKind,
};

use std::io::Write;

use log::{debug, warn};

use crate::corpus::TextVocab;
use crate::decode::{make_task_mask, progressive_decode, DecodeConfig, DecodeTrace, TaskRequest};
use crate::error::{DimoError, Result};
use crate::model::{AdamW, DenoiserParams, Real, Task, TaskRatios, TrainConfig, TrainItem};
use crate::par;
use crate::rng::{derive_seed, Rng};

/// Standard deviations below this give all-zero advantages.
pub const SIGMA_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub epsilon: f64,
    pub beta: f64,
    /// Candidate sampling temperature.
    pub temperature: f64,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub prompts_per_step: usize,
    /// Optimizer updates per sampled batch; 1 keeps every update on-policy.
    pub inner_steps: usize,
    pub clip_norm: f64,
    /// Decoder settings for candidate sampling (temperature is overridden).
    pub decode: DecodeConfig,
    /// T2M and M2T prompts are drawn in proportion to `t2m : m2t`.
    pub ratios: TaskRatios,
    /// Early stop when the mean reward over the last `collapse_window` steps
    /// falls more than `collapse_drop` below that of the first window.
    pub collapse_window: usize,
    pub collapse_drop: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            epsilon: 0.1,
            beta: 0.004,
            temperature: 1.0,
            steps: 200,
            lr: 1e-4,
            seed: 0,
            prompts_per_step: 1,
            inner_steps: 1,
            clip_norm: 1.0,
            decode: DecodeConfig { steps: 10, ..DecodeConfig::default() },
            ratios: TaskRatios::default(),
            collapse_window: 10,
            collapse_drop: 0.2,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(DimoError::Config("group size must be ≥ 2".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(DimoError::Config("ε must lie in (0, 1)".into()));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(DimoError::Config("β must be finite and ≥ 0".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(DimoError::Config("sampling temperature must be > 0".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(DimoError::Config("learning rate must be finite and ≥ 0".into()));
        }
        if self.prompts_per_step == 0 || self.inner_steps == 0 {
            return Err(DimoError::Config("prompts_per_step and inner_steps must be ≥ 1".into()));
        }
        if !(self.ratios.t2m >= 0.0 && self.ratios.m2t >= 0.0 && self.ratios.t2m + self.ratios.m2t > 0.0) {
            return Err(DimoError::Config("need a positive T2M or M2T ratio".into()));
        }
        self.decode.validate()
    }

    fn sampling_decode(&self) -> DecodeConfig {
        DecodeConfig { temperature: self.temperature, ..self.decode.clone() }
    }
}

/// `(r_i − μ) / max(σ, 1e-8)` with population σ; zeros when σ is below the guard.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return vec![];
    }
    let (mean, std) = mean_std(rewards);
    if std < SIGMA_GUARD {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)·A)` and whether the clipped branch is the active one.
pub fn clipped_surrogate(rho: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let plain = rho * advantage;
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if clipped < plain {
        (clipped, true)
    } else {
        (plain, false)
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub trace: DecodeTrace,
    /// Generated caption (M2T) or flattened motion grid (T2M).
    pub output: Vec<u32>,
    pub reward: f64,
}

/// `G` scored candidates for one prompt.
#[derive(Debug, Clone)]
pub struct CandidateGroup {
    pub task: Task,
    pub prompt: TrainItem,
    pub candidates: Vec<Candidate>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

impl CandidateGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.reward).collect()
    }

    fn committed_cells(&self) -> usize {
        self.candidates.iter().map(|c| c.trace.steps.iter().map(|s| s.probs.len()).sum::<usize>()).sum()
    }
}

/// Scores candidates for both directions.
pub struct Rewarder<'a> {
    pub config: RewardConfig,
    pub embedder: &'a CaptionEmbedder,
    pub vocab: &'a TextVocab,
    /// Pseudo-captioner for T2M rewards; frozen for the whole run.
    pub captioner: &'a dyn MotionCaptioner,
}

impl Rewarder<'_> {
    pub fn score(&self, task: Task, output: &[u32], prompt: &TrainItem) -> Result<f64> {
        match task {
            Task::T2M => reward_t2m(output, &prompt.text, self.captioner, self.embedder),
            Task::M2T => Ok(reward_m2t(output, &prompt.text, self.embedder, self.vocab, &self.config)),
            Task::M2M => Err(DimoError::Contract("no reward is defined for M2M".into())),
        }
    }
}

fn request(task: Task, prompt: &TrainItem) -> Result<TaskRequest> {
    match task {
        Task::T2M => Ok(TaskRequest::T2M { caption: prompt.text.clone(), length: prompt.motion_len() }),
        Task::M2T => Ok(TaskRequest::M2T { motion: prompt.motion.clone() }),
        Task::M2M => Err(DimoError::Contract("GRPO prompts are T2M or M2T".into())),
    }
}

/// Samples and scores `G` candidates from `old`, candidate `i` seeded with `derive_seed(seed, i)`.
pub fn sample_group<F: Real>(
    old: &DenoiserParams<F>,
    prompt: &TrainItem,
    task: Task,
    config: &GrpoConfig,
    rewarder: &Rewarder,
    seed: u64,
) -> Result<CandidateGroup> {
    let init = make_task_mask(old, &request(task, prompt)?)?;
    let base = config.sampling_decode();
    let idx: Vec<usize> = (0..config.group_size).collect();
    let candidates = par::map(&idx, |&i| -> Result<Candidate> {
        let cfg = DecodeConfig { seed: derive_seed(seed, i as u64), ..base.clone() };
        let (out, trace) = progressive_decode(old, &init, &cfg)?;
        let output = if task == Task::M2T { out.text } else { out.motion };
        let reward = rewarder.score(task, &output, prompt)?;
        Ok(Candidate { trace, output, reward })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = candidates.iter().map(|c| c.reward).collect();
    let (mean, std) = mean_std(&rewards);
    Ok(CandidateGroup { task, prompt: prompt.clone(), candidates, mean, std, advantages: group_advantages(&rewards) })
}

/// Per-step diagnostics, one CSV row each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoStats {
    pub step: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub clip_frac: f64,
    /// Mean per-cell KL to the reference.
    pub kl: f64,
    /// Negated objective.
    pub loss: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "step,mean_reward,std_reward,clip_frac,kl,loss";

pub fn write_diagnostics<W: Write>(stats: &[GrpoStats], mut w: W) -> Result<()> {
    writeln!(w, "{DIAGNOSTICS_HEADER}")?;
    for s in stats {
        writeln!(w, "{},{},{},{},{},{}", s.step, s.mean_reward, s.std_reward, s.clip_frac, s.kl, s.loss)?;
    }
    Ok(())
}

/// Objective pieces and gradient of the negated objective over a set of groups.
pub struct ObjectiveEval<F> {
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub clip_frac: f64,
    /// Importance ratios, group-major.
    pub ratios: Vec<f64>,
    pub grads: Option<DenoiserParams<F>>,
}

/// Evaluates `−J` for `groups` under `params`; `θ_old` enters only through the
/// recorded trace probabilities.
pub fn objective<F: Real>(
    params: &DenoiserParams<F>,
    reference: &DenoiserParams<F>,
    groups: &[CandidateGroup],
    config: &GrpoConfig,
    with_grad: bool,
) -> Result<ObjectiveEval<F>> {
    let p = groups.len().max(1) as f64;
    let jobs: Vec<(usize, usize)> =
        groups.iter().enumerate().flat_map(|(g, grp)| (0..grp.candidates.len()).map(move |i| (g, i))).collect();
    let cells: Vec<f64> = groups.iter().map(|g| g.committed_cells().max(1) as f64).collect();
    let results = par::map(&jobs, |&(g, i)| -> Result<(f64, f64, f64, bool, Option<DenoiserParams<F>>)> {
        let grp = &groups[g];
        let cand = &grp.candidates[i];
        let r = replay(params, Some(reference), &cand.trace, with_grad)?;
        let rho = (r.logprob - cand.trace.recorded_logprob()).exp();
        if !rho.is_finite() {
            return Err(DimoError::Numeric("importance ratio overflowed".into()));
        }
        let a = grp.advantages[i];
        let (surr, clipped) = clipped_surrogate(rho, a, config.epsilon);
        let gsize = grp.candidates.len() as f64;
        let grads = if with_grad {
            let mut grads = params.zeros_like();
            let w_lp = if clipped { 0.0 } else { -a * rho / (gsize * p) };
            let w_kl = config.beta / (cells[g] * p);
            r.backward(params, w_lp, w_kl, &mut grads);
            Some(grads)
        } else {
            None
        };
        Ok((rho, surr / gsize, r.kl_sum / cells[g], clipped, grads))
    });
    let mut out = ObjectiveEval { loss: 0.0, surrogate: 0.0, kl: 0.0, clip_frac: 0.0, ratios: vec![], grads: None };
    let mut clipped = 0usize;
    for res in results {
        let (rho, surr, kl, c, g) = res?;
        out.ratios.push(rho);
        out.surrogate += surr / p;
        out.kl += kl / p;
        clipped += usize::from(c);
        if let Some(g) = g {
            match out.grads.as_mut() {
                None => out.grads = Some(g),
                Some(acc) => acc.add_scaled(F::one(), &g),
            }
        }
    }
    out.loss = -(out.surrogate - config.beta * out.kl);
    out.clip_frac = clipped as f64 / jobs.len().max(1) as f64;
    if !out.loss.is_finite() {
        return Err(DimoError::Numeric("non-finite GRPO objective".into()));
    }
    Ok(out)
}

/// GRPO fine-tuning state.
pub struct GrpoTrainer<'a, F> {
    pub params: DenoiserParams<F>,
    /// Frozen pre-finetune snapshot for the KL term.
    pub reference: DenoiserParams<F>,
    pub optimizer: AdamW<F>,
    pub config: GrpoConfig,
    pub rewarder: Rewarder<'a>,
    pub history: Vec<GrpoStats>,
}

impl<'a, F: Real> GrpoTrainer<'a, F> {
    pub fn new(params: DenoiserParams<F>, config: GrpoConfig, rewarder: Rewarder<'a>) -> Result<Self> {
        config.validate()?;
        rewarder.config.validate()?;
        let opt_cfg = TrainConfig {
            lr: config.lr,
            weight_decay: 0.0,
            warmup: 0,
            clip_norm: config.clip_norm,
            steps: config.steps,
            ..TrainConfig::default()
        };
        let optimizer = AdamW::new(&params, &opt_cfg);
        let reference = params.clone();
        Ok(GrpoTrainer { params, reference, optimizer, config, rewarder, history: vec![] })
    }

    /// Draws this step's prompts and their tasks.
    fn draw_prompts(&self, prompts: &[TrainItem], step: usize) -> Vec<(TrainItem, Task)> {
        let mut rng = Rng::derive(self.config.seed, 2 * step as u64);
        let r = &self.config.ratios;
        (0..self.config.prompts_per_step)
            .map(|_| {
                let item = prompts[rng.below(prompts.len())].clone();
                let task = if rng.categorical(&[r.t2m, r.m2t]) == 0 { Task::T2M } else { Task::M2T };
                (item, task)
            })
            .collect()
    }

    /// Snapshots `θ_old`, samples groups and applies `inner_steps` updates.
    pub fn step(&mut self, prompts: &[TrainItem]) -> Result<GrpoStats> {
        if prompts.is_empty() {
            return Err(DimoError::EmptyInput("no GRPO prompts".into()));
        }
        let step = self.history.len();
        let old = self.params.clone();
        let seed = derive_seed(self.config.seed, 2 * step as u64 + 1);
        let mut groups = Vec::with_capacity(self.config.prompts_per_step);
        for (g, (item, task)) in self.draw_prompts(prompts, step).into_iter().enumerate() {
            groups.push(sample_group(&old, &item, task, &self.config, &self.rewarder, derive_seed(seed, g as u64))?);
        }
        let rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards()).collect();
        let (mean_reward, std_reward) = mean_std(&rewards);
        let mut first: Option<ObjectiveEval<F>> = None;
        for _ in 0..self.config.inner_steps {
            let mut eval = objective(&self.params, &self.reference, &groups, &self.config, true)?;
            let grads = eval.grads.take().expect("gradients requested");
            self.optimizer.step(&mut self.params, &grads);
            first.get_or_insert(eval);
        }
        let eval = first.expect("inner_steps ≥ 1");
        let stats = GrpoStats {
            step,
            mean_reward,
            std_reward,
            clip_frac: eval.clip_frac,
            kl: eval.kl,
            loss: eval.loss,
        };
        debug!(
            "grpo step {step} reward {mean_reward:.4}±{std_reward:.4} clip {:.3} kl {:.3e} loss {:.4}",
            stats.clip_frac, stats.kl, stats.loss
        );
        self.history.push(stats);
        Ok(stats)
    }

    /// True once the recent mean reward has fallen more than `collapse_drop`
    /// below the first window's mean.
    pub fn collapsed(&self) -> bool {
        let w = self.config.collapse_window;
        if w == 0 || self.history.len() < 2 * w {
            return false;
        }
        let avg = |s: &[GrpoStats]| s.iter().map(|x| x.mean_reward).sum::<f64>() / s.len() as f64;
        let start = avg(&self.history[..w]);
        let recent = avg(&self.history[self.history.len() - w..]);
        start > 0.0 && recent < (1.0 - self.config.collapse_drop) * start
    }

    /// Runs up to `config.steps` steps; stops early on reward collapse.
    pub fn finetune(&mut self, prompts: &[TrainItem], mut on_step: impl FnMut(&GrpoStats)) -> Result<FinetuneOutcome> {
        while self.history.len() < self.config.steps {
            let s = self.step(prompts)?;
            on_step(&s);
            if self.collapsed() {
                warn!("mean reward collapsed at step {}; stopping early", s.step);
                return Ok(FinetuneOutcome::Collapsed { at_step: s.step });
            }
        }
        Ok(FinetuneOutcome::Completed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneOutcome {
    Completed,
    Collapsed { at_step: usize },
}

/// Mean T2M reward of argmax decodes over `prompts`.
pub fn mean_t2m_reward<F: Real>(
    params: &DenoiserParams<F>,
    prompts: &[TrainItem],
    rewarder: &Rewarder,
    decode: &DecodeConfig,
) -> Result<f64> {
    if prompts.is_empty() {
        return Err(DimoError::EmptyInput("no evaluation prompts".into()));
    }
    let cfg = DecodeConfig { temperature: 0.0, ..decode.clone() };
    let scores = par::map(prompts, |p| -> Result<f64> {
        let init = make_task_mask(params, &request(Task::T2M, p)?)?;
        let (out, _) = progressive_decode(params, &init, &cfg)?;
        rewarder.score(Task::T2M, &out.motion, p)
    });
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / prompts.len() as f64)
}
