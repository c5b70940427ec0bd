use std::collections::BTreeMap;

use crate::error::{DimoError, Result};

/// Shape of the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub text_vocab: usize,
    pub max_text: usize,
    /// RVQ depth R.
    pub levels: usize,
    /// Codebook size N; motion embeddings have N + 1 rows, the last is the mask code.
    pub codebook: usize,
    /// Maximum motion timesteps.
    pub max_motion: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Transformer blocks applied to each level's embeddings before fusion.
    pub level_encoder_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_vocab: 49,
            max_text: 12,
            levels: 4,
            codebook: 64,
            max_motion: 40,
            d_model: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            level_encoder_depth: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DimoError::Config(m.to_string()));
        if self.text_vocab < 5 {
            return bad("text_vocab must exceed the four special tokens");
        }
        if self.max_text == 0 || self.max_motion == 0 || self.levels == 0 || self.codebook == 0 {
            return bad("max_text, max_motion, levels and codebook must be positive");
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.ffn == 0 {
            return bad("ffn must be positive");
        }
        Ok(())
    }

    pub fn mask_code(&self) -> u32 {
        self.codebook as u32
    }

    pub fn sep_position(&self) -> usize {
        self.max_text
    }

    pub fn seq_len(&self, motion_len: usize) -> usize {
        self.max_text + 1 + motion_len
    }

    pub fn max_positions(&self) -> usize {
        self.seq_len(self.max_motion)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("text_vocab", self.text_vocab),
            ("max_text", self.max_text),
            ("levels", self.levels),
            ("codebook", self.codebook),
            ("max_motion", self.max_motion),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("level_encoder_depth", self.level_encoder_depth),
        ] {
            m.insert(k.to_string(), v.to_string());
        }
        m
    }

    pub fn from_map(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            m.get(k)
                .ok_or_else(|| DimoError::Format(format!("model config missing {k}")))?
                .parse()
                .map_err(|_| DimoError::Format(format!("model config {k} is not an integer")))
        };
        let cfg = ModelConfig {
            text_vocab: get("text_vocab")?,
            max_text: get("max_text")?,
            levels: get("levels")?,
            codebook: get("codebook")?,
            max_motion: get("max_motion")?,
            d_model: get("d_model")?,
            layers: get("layers")?,
            heads: get("heads")?,
            ffn: get("ffn")?,
            level_encoder_depth: get("level_encoder_depth")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// How the per-sample masking rate is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSchedule {
    /// rate = u with u ~ U(0, 1), drawn once per sample.
    Linear,
    /// rate = cos(π s / 2) with s ~ U(0, 1).
    Cosine,
    /// Constant rate.
    Fixed(f64),
}

/// Relative weights for T2M, M2M and M2T training samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskRatios {
    pub t2m: f64,
    pub m2m: f64,
    pub m2t: f64,
}

impl Default for TaskRatios {
    fn default() -> Self {
        TaskRatios { t2m: 0.8, m2m: 0.1, m2t: 0.1 }
    }
}

impl TaskRatios {
    pub fn validate(&self) -> Result<()> {
        let w = [self.t2m, self.m2m, self.m2t];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(DimoError::Config("task ratios must be non-negative and sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    /// Decay the learning rate linearly to zero over `steps`.
    pub lr_decay: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub ratios: TaskRatios,
    pub schedule: MaskSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            lr: 5e-3,
            weight_decay: 0.01,
            warmup: 50,
            lr_decay: false,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            clip_norm: 1.0,
            ratios: TaskRatios::default(),
            schedule: MaskSchedule::Linear,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        if self.batch_size == 0 {
            return Err(DimoError::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(DimoError::Config("lr, weight_decay and clip_norm must be non-negative".into()));
        }
        if let MaskSchedule::Fixed(r) = self.schedule {
            if !(0.0..=1.0).contains(&r) {
                return Err(DimoError::Config("fixed mask rate must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}
