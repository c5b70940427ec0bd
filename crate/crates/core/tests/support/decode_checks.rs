//! Randomized decode invariants on a tiny model.

use dimo::decode::{progressive_decode, replay_probabilities, unmask_schedule, DecodeConfig, ScheduleShape};
use dimo::model::{corrupt, DenoiserParams, JointSequence, ModelConfig, Task};
use dimo::rng::Rng;

#[derive(Debug, Default)]
pub struct DecodeReport {
    pub triples: usize,
    pub schedule_violations: usize,
    pub partition_violations: usize,
    pub max_replay_error: f64,
}

pub fn tiny_model(seed: u64) -> DenoiserParams<f64> {
    let cfg = ModelConfig {
        text_vocab: 12,
        max_text: 8,
        levels: 2,
        codebook: 7,
        max_motion: 16,
        d_model: 16,
        layers: 1,
        heads: 2,
        ffn: 16,
        level_encoder_depth: 0,
    };
    DenoiserParams::init(cfg, seed).unwrap()
}

fn random_mask(rng: &mut Rng, len: usize, masked: usize) -> Vec<bool> {
    let mut m = vec![false; len];
    for i in rng.sample_distinct(len, masked) {
        m[i] = true;
    }
    m
}

/// Draws `triples` random `(total, S, shape)` settings; checks the schedule
/// alone, then decodes a sequence with `total` masked cells under that
/// schedule and checks the trace.
pub fn decode_invariants(triples: usize, seed: u64) -> DecodeReport {
    let params = tiny_model(seed);
    let c = params.config;
    let mut rng = Rng::new(seed);
    let mut report = DecodeReport { triples, ..DecodeReport::default() };
    for _ in 0..triples {
        let text_side = rng.bernoulli(0.3);
        let cap = if text_side { c.max_text } else { c.max_motion };
        let total = 1 + rng.below(cap);
        let steps = 1 + rng.below(24);
        let shape = if rng.bernoulli(0.5) { ScheduleShape::Cosine } else { ScheduleShape::Linear };

        let big_total = rng.below(500);
        for (t, s) in [(total, steps), (big_total, steps)] {
            let k = unmask_schedule(t, s, shape);
            if k.len() != s || k.iter().sum::<usize>() != t {
                report.schedule_violations += 1;
            }
        }

        let text: Vec<u32> = (0..c.max_text).map(|_| 4 + rng.below(8) as u32).collect();
        let init = if text_side {
            let t = 1 + rng.below(c.max_motion);
            let motion: Vec<u32> = (0..t * c.levels).map(|_| rng.below(7) as u32).collect();
            let seq = JointSequence::new(&text, &motion, c.levels, Task::M2T).unwrap();
            corrupt(&seq, &random_mask(&mut rng, c.max_text, total), &vec![false; t], c.mask_code()).unwrap()
        } else {
            let t = total + rng.below(c.max_motion - total + 1);
            let motion: Vec<u32> = (0..t * c.levels).map(|_| rng.below(7) as u32).collect();
            let task = if rng.bernoulli(0.5) { Task::T2M } else { Task::M2M };
            let seq = JointSequence::new(&text, &motion, c.levels, task).unwrap();
            corrupt(&seq, &vec![false; c.max_text], &random_mask(&mut rng, t, total), c.mask_code()).unwrap()
        };
        let cfg = DecodeConfig {
            steps,
            shape,
            cfg_scale: rng.range(0.0, 4.0),
            pad_factor: rng.range(0.3, 1.0),
            temperature: if rng.bernoulli(0.5) { 0.0 } else { rng.range(0.5, 1.5) },
            seed: rng.next_u64(),
        };
        let (out, trace) = progressive_decode(&params, &init, &cfg).unwrap();
        let initial: Vec<usize> = if text_side {
            (0..c.max_text).filter(|&i| init.text_mask[i]).collect()
        } else {
            (0..init.motion_mask.len()).filter(|&i| init.motion_mask[i]).collect()
        };
        let mut committed: Vec<usize> = trace.steps.iter().flat_map(|s| s.committed.iter().copied()).collect();
        committed.sort_unstable();
        let left = if text_side { out.masked_text() } else { out.masked_timesteps() };
        if committed != initial || left != 0 || trace.steps.len() != steps {
            report.partition_violations += 1;
        }
        let replayed = replay_probabilities(&params, &trace).unwrap();
        for (r, s) in replayed.iter().zip(&trace.steps) {
            if r.len() != s.probs.len() {
                report.max_replay_error = f64::INFINITY;
            }
            for (a, b) in r.iter().zip(&s.probs) {
                report.max_replay_error = report.max_replay_error.max((a - b).abs());
            }
        }
    }
    report
}
