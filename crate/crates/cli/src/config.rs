//! Flat INI run configuration.
//!
//! Every key has a section, a type and a default taken from the library's own
//! defaults. Files and `--set section.key=value` overrides may only name known
//! keys. The resolved table is written back out in schema order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dimo::corpus::CorpusConfig;
use dimo::decode::{DecodeConfig, ScheduleShape};
use dimo::grpo::{GrpoConfig, RewardConfig, RewardKind};
use dimo::metrics::{EvaluatorConfig, ScoreConfig};
use dimo::model::{MaskSchedule, ModelConfig, TaskRatios, TrainConfig};
use dimo::rvq::EmaConfig;
use dimo::{DimoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Text,
}

struct Key {
    section: &'static str,
    name: &'static str,
    kind: Kind,
    default: String,
}

fn key(section: &'static str, name: &'static str, kind: Kind, default: impl ToString) -> Key {
    Key { section, name, kind, default: default.to_string() }
}

fn schedule_name(s: MaskSchedule) -> String {
    match s {
        MaskSchedule::Linear => "linear".into(),
        MaskSchedule::Cosine => "cosine".into(),
        MaskSchedule::Fixed(r) => format!("fixed:{r}"),
    }
}

fn schema() -> Vec<Key> {
    use Kind::*;
    let corpus = CorpusConfig::default();
    let ema = EmaConfig::default();
    let model = ModelConfig::default();
    let train = TrainConfig::default();
    let decode = DecodeConfig::default();
    let grpo = GrpoConfig::default();
    let reward = RewardConfig::default();
    let evaluator = EvaluatorConfig::default();
    let score = ScoreConfig::default();
    vec![
        key("run", "seed", Int, 0),
        key("run", "threads", Int, 0),
        key("io", "corpus", Text, ""),
        key("io", "codebooks", Text, ""),
        key("io", "checkpoint", Text, ""),
        key("corpus", "count", Int, 500),
        key("corpus", "noise_sigma", Float, corpus.noise_sigma),
        key("corpus", "min_primitives", Int, corpus.min_primitives),
        key("corpus", "max_primitives", Int, corpus.max_primitives),
        key("corpus", "min_duration", Int, corpus.min_duration),
        key("corpus", "max_duration", Int, corpus.max_duration),
        key("corpus", "fps", Float, corpus.fps),
        key("rvq", "layers", Int, model.levels),
        key("rvq", "codebook", Int, model.codebook),
        key("rvq", "downsample", Int, 4),
        key("rvq", "decay", Float, ema.decay),
        key("rvq", "iterations", Int, ema.iterations),
        key("rvq", "dead_threshold", Float, ema.dead_threshold),
        key("model", "max_text", Int, model.max_text),
        key("model", "max_motion", Int, model.max_motion),
        key("model", "d_model", Int, model.d_model),
        key("model", "layers", Int, model.layers),
        key("model", "heads", Int, model.heads),
        key("model", "ffn", Int, model.ffn),
        key("model", "level_encoder_depth", Int, model.level_encoder_depth),
        key("train", "steps", Int, train.steps),
        key("train", "batch_size", Int, train.batch_size),
        key("train", "lr", Float, train.lr),
        key("train", "weight_decay", Float, train.weight_decay),
        key("train", "warmup", Int, train.warmup),
        key("train", "lr_decay", Bool, train.lr_decay),
        key("train", "beta1", Float, train.beta1),
        key("train", "beta2", Float, train.beta2),
        key("train", "clip_norm", Float, train.clip_norm),
        key("train", "ratio_t2m", Float, train.ratios.t2m),
        key("train", "ratio_m2m", Float, train.ratios.m2m),
        key("train", "ratio_m2t", Float, train.ratios.m2t),
        key("train", "schedule", Text, schedule_name(train.schedule)),
        key("decode", "steps", Int, decode.steps),
        key("decode", "cfg_scale", Float, decode.cfg_scale),
        key("decode", "pad_factor", Float, decode.pad_factor),
        key("decode", "shape", Text, decode.shape.name()),
        key("decode", "temperature", Float, decode.temperature),
        key("grpo", "group_size", Int, grpo.group_size),
        key("grpo", "epsilon", Float, grpo.epsilon),
        key("grpo", "beta", Float, grpo.beta),
        key("grpo", "temperature", Float, grpo.temperature),
        key("grpo", "steps", Int, grpo.steps),
        key("grpo", "lr", Float, grpo.lr),
        key("grpo", "prompts_per_step", Int, grpo.prompts_per_step),
        key("grpo", "inner_steps", Int, grpo.inner_steps),
        key("grpo", "clip_norm", Float, grpo.clip_norm),
        key("grpo", "decode_steps", Int, grpo.decode.steps),
        key("grpo", "ratio_t2m", Float, grpo.ratios.t2m),
        key("grpo", "ratio_m2t", Float, grpo.ratios.m2t),
        key("grpo", "collapse_window", Int, grpo.collapse_window),
        key("grpo", "collapse_drop", Float, grpo.collapse_drop),
        key("grpo", "lambda_verb", Float, reward.lambda_verb),
        key("grpo", "lambda_clip", Float, reward.lambda_clip),
        key("grpo", "gamma", Float, reward.gamma),
        key("eval", "split", Text, "test"),
        key("eval", "limit", Int, 0),
        key("eval", "pool", Int, score.pool),
        key("eval", "diversity_subset", Int, score.diversity_subset),
        key("eval", "mm_samples", Int, score.mm_samples),
        key("eval", "sweep_steps", Text, "1,5,10,20"),
        key("eval", "embed_dim", Int, evaluator.dim),
        key("eval", "embed_temperature", Float, evaluator.temperature),
        key("eval", "embed_steps", Int, evaluator.steps),
        key("eval", "embed_batch", Int, evaluator.batch_size),
        key("eval", "embed_lr", Float, evaluator.lr),
    ]
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<(String, String), String>,
}

fn check(kind: Kind, section: &str, name: &str, value: &str) -> Result<()> {
    let ok = match kind {
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Float => value.parse::<f64>().is_ok(),
        Kind::Bool => value.parse::<bool>().is_ok(),
        Kind::Text => true,
    };
    if ok {
        Ok(())
    } else {
        Err(DimoError::Config(format!("{section}.{name} = {value:?} is not a valid {kind:?}")))
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = schema()
            .into_iter()
            .map(|k| ((k.section.to_string(), k.name.to_string()), k.default))
            .collect();
        RunConfig { values }
    }
}

impl RunConfig {
    pub fn set(&mut self, section: &str, name: &str, value: &str) -> Result<()> {
        let schema = schema();
        let k = schema
            .iter()
            .find(|k| k.section == section && k.name == name)
            .ok_or_else(|| DimoError::Config(format!("unknown config key {section}.{name}")))?;
        let value = value.trim();
        check(k.kind, section, name, value)?;
        self.values.insert((section.to_string(), name.to_string()), value.to_string());
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn set_dotted(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| DimoError::Config(format!("override {assignment:?} is not section.key=value")))?;
        let (section, name) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| DimoError::Config(format!("override key {path:?} is not section.key")))?;
        self.set(section, name, value)
    }

    /// Applies an INI document on top of the current values.
    pub fn merge_ini(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DimoError::Config(format!("config line {}: expected key = value", n + 1)))?;
            let s = section
                .as_deref()
                .ok_or_else(|| DimoError::Config(format!("config line {}: key outside a section", n + 1)))?;
            self.set(s, k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_ini(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::from("# dimo run configuration v1\n");
        let mut current = "";
        for k in schema() {
            if k.section != current {
                let _ = write!(out, "\n[{}]\n", k.section);
                current = k.section;
            }
            let _ = writeln!(out, "{} = {}", k.name, self.text(k.section, k.name));
        }
        out
    }

    pub fn text(&self, section: &str, name: &str) -> &str {
        self.values
            .get(&(section.to_string(), name.to_string()))
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{section}.{name} is not in the schema"))
    }

    pub fn int(&self, section: &str, name: &str) -> usize {
        self.text(section, name).parse().expect("validated on set")
    }

    pub fn u64(&self, section: &str, name: &str) -> u64 {
        self.text(section, name).parse().expect("validated on set")
    }

    pub fn float(&self, section: &str, name: &str) -> f64 {
        self.text(section, name).parse().expect("validated on set")
    }

    pub fn flag(&self, section: &str, name: &str) -> bool {
        self.text(section, name).parse().expect("validated on set")
    }

    pub fn seed(&self) -> u64 {
        self.u64("run", "seed")
    }

    pub fn corpus(&self) -> Result<CorpusConfig> {
        let c = CorpusConfig {
            noise_sigma: self.float("corpus", "noise_sigma"),
            min_primitives: self.int("corpus", "min_primitives"),
            max_primitives: self.int("corpus", "max_primitives"),
            min_duration: self.int("corpus", "min_duration"),
            max_duration: self.int("corpus", "max_duration"),
            fps: self.float("corpus", "fps") as f32,
            max_caption_len: self.int("model", "max_text"),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn ema(&self) -> EmaConfig {
        EmaConfig {
            decay: self.float("rvq", "decay"),
            iterations: self.int("rvq", "iterations"),
            dead_threshold: self.float("rvq", "dead_threshold"),
            seed: self.seed(),
        }
    }

    /// Model shape; vocabulary size and token layout come from the data.
    pub fn model(&self, text_vocab: usize, levels: usize, codebook: usize) -> Result<ModelConfig> {
        let m = ModelConfig {
            text_vocab,
            max_text: self.int("model", "max_text"),
            levels,
            codebook,
            max_motion: self.int("model", "max_motion"),
            d_model: self.int("model", "d_model"),
            layers: self.int("model", "layers"),
            heads: self.int("model", "heads"),
            ffn: self.int("model", "ffn"),
            level_encoder_depth: self.int("model", "level_encoder_depth"),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let schedule = match self.text("train", "schedule") {
            "linear" => MaskSchedule::Linear,
            "cosine" => MaskSchedule::Cosine,
            other => match other.strip_prefix("fixed:").and_then(|r| r.parse().ok()) {
                Some(r) => MaskSchedule::Fixed(r),
                None => return Err(DimoError::Config(format!("unknown mask schedule {other:?}"))),
            },
        };
        let t = TrainConfig {
            steps: self.int("train", "steps"),
            batch_size: self.int("train", "batch_size"),
            lr: self.float("train", "lr"),
            weight_decay: self.float("train", "weight_decay"),
            warmup: self.int("train", "warmup"),
            lr_decay: self.flag("train", "lr_decay"),
            beta1: self.float("train", "beta1"),
            beta2: self.float("train", "beta2"),
            clip_norm: self.float("train", "clip_norm"),
            ratios: TaskRatios {
                t2m: self.float("train", "ratio_t2m"),
                m2m: self.float("train", "ratio_m2m"),
                m2t: self.float("train", "ratio_m2t"),
            },
            schedule,
            seed: self.seed(),
            ..TrainConfig::default()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn decode(&self) -> Result<DecodeConfig> {
        let d = DecodeConfig {
            steps: self.int("decode", "steps"),
            cfg_scale: self.float("decode", "cfg_scale"),
            pad_factor: self.float("decode", "pad_factor"),
            shape: self.text("decode", "shape").parse::<ScheduleShape>()?,
            temperature: self.float("decode", "temperature"),
            seed: self.seed(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn grpo(&self) -> Result<GrpoConfig> {
        let decode = DecodeConfig { steps: self.int("grpo", "decode_steps"), ..self.decode()? };
        let t2m = self.float("grpo", "ratio_t2m");
        let m2t = self.float("grpo", "ratio_m2t");
        let g = GrpoConfig {
            group_size: self.int("grpo", "group_size"),
            epsilon: self.float("grpo", "epsilon"),
            beta: self.float("grpo", "beta"),
            temperature: self.float("grpo", "temperature"),
            steps: self.int("grpo", "steps"),
            lr: self.float("grpo", "lr"),
            seed: self.seed(),
            prompts_per_step: self.int("grpo", "prompts_per_step"),
            inner_steps: self.int("grpo", "inner_steps"),
            clip_norm: self.float("grpo", "clip_norm"),
            decode,
            ratios: TaskRatios { t2m, m2m: 1.0 - t2m - m2t, m2t },
            collapse_window: self.int("grpo", "collapse_window"),
            collapse_drop: self.float("grpo", "collapse_drop"),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn reward(&self) -> Result<RewardConfig> {
        let r = RewardConfig {
            lambda_verb: self.float("grpo", "lambda_verb"),
            lambda_clip: self.float("grpo", "lambda_clip"),
            gamma: self.float("grpo", "gamma"),
            kind: RewardKind::SelfM2t,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn evaluator(&self) -> EvaluatorConfig {
        EvaluatorConfig {
            dim: self.int("eval", "embed_dim"),
            temperature: self.float("eval", "embed_temperature"),
            steps: self.int("eval", "embed_steps"),
            batch_size: self.int("eval", "embed_batch"),
            lr: self.float("eval", "embed_lr"),
            seed: self.seed(),
        }
    }

    pub fn score(&self) -> ScoreConfig {
        ScoreConfig {
            pool: self.int("eval", "pool"),
            diversity_subset: self.int("eval", "diversity_subset"),
            mm_samples: self.int("eval", "mm_samples"),
            seed: self.seed(),
        }
    }

    pub fn sweep_steps(&self) -> Result<Vec<usize>> {
        self.text("eval", "sweep_steps")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| DimoError::Config(format!("sweep step {s:?} is not a positive integer")))
            })
            .collect()
    }
}
