//! Central-difference checks of the hand-written backward passes in f64.

use dimo::decode::{make_task_mask, progressive_decode, DecodeConfig, TaskRequest};
use dimo::grpo::{group_advantages, mean_std, objective, sequence_logprob, Candidate, CandidateGroup, GrpoConfig};
use dimo::model::{
    backward, corrupt, forward, forward_cached, masked_ce_grad, masked_ce_loss, masked_cell_count, DenoiserParams,
    Example, JointSequence, ModelConfig, Task, TrainItem,
};
use dimo::rng::Rng;

const H: f64 = 1e-5;

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

impl GradReport {
    fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }
}

pub fn tiny_config(layers: usize, depth: usize) -> ModelConfig {
    ModelConfig {
        text_vocab: 10,
        max_text: 4,
        levels: 2,
        codebook: 5,
        max_motion: 4,
        d_model: 8,
        layers,
        heads: 2,
        ffn: 12,
        level_encoder_depth: depth,
    }
}

pub fn jitter(p: &DenoiserParams<f64>, scale: f64, seed: u64) -> DenoiserParams<f64> {
    let mut q = p.clone();
    let mut rng = Rng::new(seed);
    for t in &mut q.tensors {
        t.iter_mut().for_each(|v| *v += scale * rng.normal());
    }
    q
}

/// Compares `analytic` against central differences of `loss` at the first,
/// last and four random coordinates of every tensor.
fn compare(
    p: &mut DenoiserParams<f64>,
    analytic: &DenoiserParams<f64>,
    seed: u64,
    loss: impl Fn(&DenoiserParams<f64>) -> f64,
) -> GradReport {
    let mut rng = Rng::new(seed);
    let mut report = GradReport::default();
    for ti in 0..p.tensors.len() {
        let n = p.tensors[ti].len();
        let mut idx: Vec<usize> = vec![0, n - 1];
        for _ in 0..4 {
            idx.push(rng.below(n));
        }
        for &j in &idx {
            let orig = p.tensors[ti][j];
            p.tensors[ti][j] = orig + H;
            let up = loss(p);
            p.tensors[ti][j] = orig - H;
            let down = loss(p);
            p.tensors[ti][j] = orig;
            let fd = (up - down) / (2.0 * H);
            let an = analytic.tensors[ti][j];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
            if (fd - an).abs() >= 1e-9 {
                report.worst_rel = report.worst_rel.max(rel);
                if rel > 1e-4 {
                    eprintln!("{} [{j}]: analytic {an:e} numeric {fd:e}", p.layout.names[ti]);
                    report.failures += 1;
                }
            }
            report.checked += 1;
        }
    }
    report
}

fn ce_example(task: Task) -> Example {
    let text = [4, 7, 9, 0];
    let motion = [0, 1, 3, 2, 4, 4];
    let seq = JointSequence::new(&text, &motion, 2, task).unwrap();
    let (tm, mm) = match task {
        Task::M2T => (vec![true, false, true, true], vec![false; 3]),
        _ => (vec![false; 4], vec![true, false, true]),
    };
    let input = corrupt(&seq, &tm, &mm, 5).unwrap();
    Example { input, target_text: seq.text.clone(), target_motion: seq.motion.clone() }
}

/// Masked cross-entropy gradient on one example.
pub fn masked_ce(layers: usize, depth: usize, task: Task, seed: u64) -> GradReport {
    // gains and biases moved off their trivial init values
    let mut p = jitter(&DenoiserParams::<f64>::init(tiny_config(layers, depth), seed).unwrap(), 0.05, seed ^ 0xabc);
    let ex = ce_example(task);
    let (logits, cache) = forward_cached(&p, &ex.input.text, &ex.input.motion).unwrap();
    let (_, dl) = masked_ce_grad(&logits, &ex, 1.0 / masked_cell_count(&ex.input) as f64);
    let mut g = p.zeros_like();
    backward(&p, &cache, &dl, &mut g);
    compare(&mut p, &g, seed ^ 0xdef, |q| {
        masked_ce_loss(&forward(q, &ex.input.text, &ex.input.motion).unwrap(), &ex).unwrap()
    })
}

/// All three masked-CE configurations: T2M, M2T, and M2M with level encoders.
pub fn masked_ce_all() -> GradReport {
    let mut r = masked_ce(1, 0, Task::T2M, 1);
    r.merge(masked_ce(1, 0, Task::M2T, 2));
    r.merge(masked_ce(2, 1, Task::M2M, 3));
    r
}

fn group(old: &DenoiserParams<f64>, task: Task, rewards: &[f64], decode: &DecodeConfig) -> CandidateGroup {
    let prompt = TrainItem { text: vec![4, 7, 9, 0], motion: vec![0, 1, 3, 2, 4, 4], levels: 2 };
    let req = match task {
        Task::T2M => TaskRequest::T2M { caption: prompt.text.clone(), length: 3 },
        _ => TaskRequest::M2T { motion: prompt.motion.clone() },
    };
    let init = make_task_mask(old, &req).unwrap();
    let candidates = rewards
        .iter()
        .enumerate()
        .map(|(i, &reward)| {
            let cfg = DecodeConfig { seed: 100 + i as u64, ..decode.clone() };
            let (out, trace) = progressive_decode(old, &init, &cfg).unwrap();
            let output = if task == Task::M2T { out.text } else { out.motion };
            Candidate { trace, output, reward }
        })
        .collect();
    let (mean, std) = mean_std(rewards);
    CandidateGroup { task, prompt, candidates, mean, std, advantages: group_advantages(rewards) }
}

/// One sampled T2M group and one M2T group with fixed rewards.
pub fn groups(old: &DenoiserParams<f64>) -> Vec<CandidateGroup> {
    let decode = DecodeConfig { steps: 2, temperature: 0.7, cfg_scale: 2.5, pad_factor: 0.6, ..DecodeConfig::default() };
    vec![group(old, Task::T2M, &[0.1, 0.9, 0.4], &decode), group(old, Task::M2T, &[0.5, 0.2, 0.3], &decode)]
}

/// GRPO objective gradient away from every fixed point.
pub fn grpo_objective() -> (GradReport, bool) {
    let base = DenoiserParams::<f64>::init(tiny_config(1, 0), 4).unwrap();
    let old = jitter(&base, 0.3, 1);
    let reference = jitter(&old, 0.2, 2);
    let mut theta = jitter(&old, 0.05, 3);
    let gs = groups(&old);
    let cfg = GrpoConfig { epsilon: 0.9, beta: 0.5, ..GrpoConfig::default() };
    let eval = objective(&theta, &reference, &gs, &cfg, true).unwrap();
    let off_fixed_point = eval.ratios.iter().any(|r| (r - 1.0).abs() > 1e-3) && eval.kl > 0.0;
    let g = eval.grads.unwrap();
    let report = compare(&mut theta, &g, 9, |p| objective(p, &reference, &gs, &cfg, false).unwrap().loss);
    (report, off_fixed_point)
}

/// Largest deviations at `θ = θ_old = θ_ref`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Identities {
    pub max_ratio_dev: f64,
    pub kl: f64,
    pub surrogate: f64,
    pub clip_frac: f64,
    pub max_logprob_dev: f64,
    /// Largest |advantage| over equal-reward groups.
    pub equal_reward_adv: f64,
}

pub fn grpo_identities() -> Identities {
    let old = jitter(&DenoiserParams::<f64>::init(tiny_config(1, 0), 5).unwrap(), 0.3, 6);
    let gs = groups(&old);
    let eval = objective(&old, &old, &gs, &GrpoConfig::default(), false).unwrap();
    let mut out = Identities {
        max_ratio_dev: eval.ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max),
        kl: eval.kl.abs(),
        surrogate: eval.surrogate.abs(),
        clip_frac: eval.clip_frac,
        ..Identities::default()
    };
    for g in &gs {
        for c in &g.candidates {
            let lp = sequence_logprob(&old, &c.trace).unwrap();
            out.max_logprob_dev = out.max_logprob_dev.max((lp - c.trace.recorded_logprob()).abs());
        }
    }
    let mut rng = Rng::new(7);
    for _ in 0..200 {
        let v = rng.range(-3.0, 3.0);
        let n = 2 + rng.below(15);
        for a in group_advantages(&vec![v; n]) {
            out.equal_reward_adv = out.equal_reward_adv.max(a.abs());
        }
    }
    out
}
