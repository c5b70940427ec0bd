use std::sync::Arc;

use super::{ModelConfig, Real};
use crate::error::{DimoError, Result};
use crate::rng::Rng;

/// Tensor indices of one pre-LN transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Names, shapes and roles of every parameter tensor, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub text_emb: usize,
    pub motion_emb: Vec<usize>,
    pub fusion: usize,
    pub pos: usize,
    pub level_blocks: Vec<Vec<BlockIds>>,
    pub blocks: Vec<BlockIds>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub text_w: usize,
    pub text_b: usize,
    pub motion_w: Vec<usize>,
    pub motion_b: Vec<usize>,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize]) -> usize {
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.names.len() - 1
    }

    fn block(&mut self, prefix: &str, d: usize, ffn: usize) -> BlockIds {
        let mut p = |n: &str, s: &[usize]| self.push(format!("{prefix}.{n}"), s);
        BlockIds {
            ln1_g: p("ln1.g", &[d]),
            ln1_b: p("ln1.b", &[d]),
            wq: p("attn.wq", &[d, d]),
            bq: p("attn.bq", &[d]),
            wk: p("attn.wk", &[d, d]),
            bk: p("attn.bk", &[d]),
            wv: p("attn.wv", &[d, d]),
            bv: p("attn.bv", &[d]),
            wo: p("attn.wo", &[d, d]),
            bo: p("attn.bo", &[d]),
            ln2_g: p("ln2.g", &[d]),
            ln2_b: p("ln2.b", &[d]),
            w1: p("ffn.w1", &[d, ffn]),
            b1: p("ffn.b1", &[ffn]),
            w2: p("ffn.w2", &[ffn, d]),
            b2: p("ffn.b2", &[d]),
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder { names: Vec::new(), shapes: Vec::new() };
        let text_emb = b.push("text_emb".into(), &[cfg.text_vocab, d]);
        let motion_emb = (0..cfg.levels)
            .map(|l| b.push(format!("motion_emb.{l}"), &[cfg.codebook + 1, d]))
            .collect();
        let fusion = b.push("fusion".into(), &[cfg.levels]);
        let pos = b.push("pos".into(), &[cfg.max_positions(), d]);
        let level_blocks = (0..cfg.levels)
            .map(|l| {
                (0..cfg.level_encoder_depth)
                    .map(|k| b.block(&format!("level{l}.block{k}"), d, cfg.ffn))
                    .collect()
            })
            .collect();
        let blocks = (0..cfg.layers).map(|k| b.block(&format!("block{k}"), d, cfg.ffn)).collect();
        let lnf_g = b.push("ln_f.g".into(), &[d]);
        let lnf_b = b.push("ln_f.b".into(), &[d]);
        let text_w = b.push("head.text.w".into(), &[d, cfg.text_vocab]);
        let text_b = b.push("head.text.b".into(), &[cfg.text_vocab]);
        let mut motion_w = Vec::new();
        let mut motion_b = Vec::new();
        for l in 0..cfg.levels {
            motion_w.push(b.push(format!("head.motion{l}.w"), &[d, cfg.codebook]));
            motion_b.push(b.push(format!("head.motion{l}.b"), &[cfg.codebook]));
        }
        ParamLayout {
            names: b.names,
            shapes: b.shapes,
            text_emb,
            motion_emb,
            fusion,
            pos,
            level_blocks,
            blocks,
            lnf_g,
            lnf_b,
            text_w,
            text_b,
            motion_w,
            motion_b,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn numel(&self, i: usize) -> usize {
        self.shapes[i].iter().product()
    }

    /// Matrices and embedding tables get weight decay; gains, biases and fusion weights do not.
    pub fn decays(&self, i: usize) -> bool {
        self.shapes[i].len() == 2
    }

    fn is_ln_gain(&self, i: usize) -> bool {
        let n = &self.names[i];
        n.ends_with("ln1.g") || n.ends_with("ln2.g") || n == "ln_f.g"
    }
}

/// Denoiser weights: one flat buffer per tensor of the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<F> {
    pub config: ModelConfig,
    pub layout: Arc<ParamLayout>,
    pub tensors: Vec<Vec<F>>,
}

impl<F: Real> DenoiserParams<F> {
    /// Random initialization: N(0, 0.02) for embeddings and heads, N(0, 1/√fan_in)
    /// for block matrices, unit LayerNorm gains, zero biases and fusion logits.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::new(&config));
        let mut rng = Rng::new(seed);
        let mut tensors = Vec::with_capacity(layout.len());
        for i in 0..layout.len() {
            let n = layout.numel(i);
            let shape = &layout.shapes[i];
            let name = &layout.names[i];
            let t: Vec<F> = if layout.is_ln_gain(i) {
                vec![F::one(); n]
            } else if shape.len() == 1 {
                vec![F::zero(); n]
            } else {
                let std = if name.contains("emb") || name == "pos" || name.starts_with("head") {
                    0.02
                } else {
                    1.0 / (shape[0] as f64).sqrt()
                };
                (0..n).map(|_| F::of(rng.normal() * std)).collect()
            };
            tensors.push(t);
        }
        Ok(DenoiserParams { config, layout, tensors })
    }

    pub fn zeros_like(&self) -> Self {
        DenoiserParams {
            config: self.config,
            layout: Arc::clone(&self.layout),
            tensors: self.tensors.iter().map(|t| vec![F::zero(); t.len()]).collect(),
        }
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Vec<F>>) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::new(&config));
        if tensors.len() != layout.len() {
            return Err(DimoError::Format(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.len() != layout.numel(i) {
                return Err(DimoError::Format(format!("tensor {} has wrong size", layout.names[i])));
            }
        }
        Ok(DenoiserParams { config, layout, tensors })
    }

    #[inline]
    pub fn t(&self, i: usize) -> &[F] {
        &self.tensors[i]
    }

    #[inline]
    pub fn tm(&mut self, i: usize) -> &mut [F] {
        &mut self.tensors[i]
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    /// `self += a · other`
    pub fn add_scaled(&mut self, a: F, other: &Self) {
        for (x, y) in self.tensors.iter_mut().zip(&other.tensors) {
            super::ops::axpy(a, y, x);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v.f64() * v.f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .zip(other.tensors.iter().flatten())
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<G: Real>(&self) -> DenoiserParams<G> {
        DenoiserParams {
            config: self.config,
            layout: Arc::clone(&self.layout),
            tensors: self.tensors.iter().map(|t| t.iter().map(|v| G::of(v.f64())).collect()).collect(),
        }
    }

    /// Index of a tensor by name.
    pub fn find(&self, name: &str) -> Option<usize> {
        self.layout.names.iter().position(|n| n == name)
    }
}
