use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{DimoError, Result};
use crate::grpo::{CaptionEmbedder, Gram};
use crate::rng::Rng;
use crate::rvq::MotionClip;

/// Per-channel mean, standard deviation, mean absolute frame-to-frame change
/// and largest non-DC spectral magnitude (divided by the frame count),
/// grouped by statistic: `4 × channels` values.
pub fn motion_features(clip: &MotionClip) -> Vec<f64> {
    let c = clip.channels;
    let n = clip.frames();
    let mut out = vec![0.0; 4 * c];
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    for ch in 0..c {
        let x: Vec<f64> = (0..n).map(|t| clip.data[t * c + ch] as f64).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let vel = if n > 1 { x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        fft.process(&mut buf);
        let peak = buf.iter().take(n / 2 + 1).skip(1).map(|z| z.norm()).fold(0.0, f64::max) / n as f64;
        out[ch] = mean;
        out[c + ch] = var.sqrt();
        out[2 * c + ch] = vel;
        out[3 * c + ch] = peak;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorConfig {
    /// Shared embedding dimension.
    pub dim: usize,
    pub temperature: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig { dim: 32, temperature: 0.1, steps: 400, batch_size: 128, lr: 0.01, seed: 0 }
    }
}

type Sparse = Vec<(usize, f64)>;

/// Contrastively aligned text and motion embeddings on the unit sphere.
///
/// Text: TF-IDF caption vector → linear map. Motion: standardized
/// [`motion_features`] → linear map. Both outputs are L2-normalized.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    pub dim: usize,
    embedder: Arc<CaptionEmbedder>,
    grams: HashMap<Gram, usize>,
    raw_mean: Vec<f64>,
    raw_scale: Vec<f64>,
    /// `dim × grams`
    w_text: Vec<f64>,
    /// `dim × raw features`
    w_motion: Vec<f64>,
}

fn normalize(u: &mut [f64]) -> f64 {
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    u.iter_mut().for_each(|x| *x /= n);
    n
}

impl FeatureSpace {
    fn text_input(&self, caption: &[u32]) -> Sparse {
        let mut v: Sparse = self
            .embedder
            .embed(caption)
            .into_iter()
            .filter_map(|(g, x)| self.grams.get(&g).map(|&i| (i, x)))
            .collect();
        v.sort_unstable_by_key(|e| e.0);
        v
    }

    fn motion_input(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.raw_mean).zip(&self.raw_scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    fn project_text(&self, x: &Sparse) -> Vec<f64> {
        let g = self.grams.len();
        (0..self.dim).map(|k| x.iter().map(|&(i, v)| self.w_text[k * g + i] * v).sum()).collect()
    }

    fn project_motion(&self, z: &[f64]) -> Vec<f64> {
        let r = self.raw_mean.len();
        (0..self.dim).map(|k| self.w_motion[k * r..(k + 1) * r].iter().zip(z).map(|(w, x)| w * x).sum()).collect()
    }

    pub fn embed_text(&self, caption: &[u32]) -> Vec<f64> {
        let mut u = self.project_text(&self.text_input(caption));
        normalize(&mut u);
        u
    }

    /// Embedding of precomputed [`motion_features`].
    pub fn embed_motion_features(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.raw_mean.len() {
            return Err(DimoError::Contract(format!("expected {} motion features, got {}", self.raw_mean.len(), raw.len())));
        }
        let mut u = self.project_motion(&self.motion_input(raw));
        normalize(&mut u);
        Ok(u)
    }

    pub fn embed_motion(&self, clip: &MotionClip) -> Result<Vec<f64>> {
        self.embed_motion_features(&motion_features(clip))
    }

    /// Fits both maps with a symmetric InfoNCE loss over matched pairs.
    pub fn fit(captions: &[Vec<u32>], clips: &[MotionClip], cfg: &EvaluatorConfig) -> Result<Self> {
        let raw: Vec<Vec<f64>> = clips.iter().map(motion_features).collect();
        Self::fit_features(captions, &raw, cfg)
    }

    pub fn fit_features(captions: &[Vec<u32>], raw: &[Vec<f64>], cfg: &EvaluatorConfig) -> Result<Self> {
        if captions.len() != raw.len() {
            return Err(DimoError::Contract("captions and motions must pair up".into()));
        }
        if captions.len() < 2 {
            return Err(DimoError::InsufficientData { needed: 2, got: captions.len() });
        }
        if cfg.dim == 0 || cfg.batch_size < 2 || !(cfg.temperature > 0.0) {
            return Err(DimoError::Config("evaluator needs dim ≥ 1, batch ≥ 2 and temperature > 0".into()));
        }
        let embedder = CaptionEmbedder::fit(captions.iter().map(|c| c.as_slice()))?;
        let grams: HashMap<Gram, usize> = embedder.vocabulary().into_iter().enumerate().map(|(i, g)| (g, i)).collect();
        if grams.is_empty() {
            return Err(DimoError::EmptyInput("captions have no content tokens".into()));
        }
        let rdim = raw[0].len();
        if rdim == 0 || raw.iter().any(|r| r.len() != rdim) {
            return Err(DimoError::Contract("motion features have mixed dimensions".into()));
        }
        let n = raw.len() as f64;
        let raw_mean: Vec<f64> = (0..rdim).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let raw_scale: Vec<f64> = (0..rdim)
            .map(|j| {
                let v = raw.iter().map(|r| (r[j] - raw_mean[j]).powi(2)).sum::<f64>() / n;
                if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let mut rng = Rng::derive(cfg.seed, 0x6576_616c);
        let g = grams.len();
        let w_text = (0..cfg.dim * g).map(|_| rng.normal()).collect();
        let w_motion = (0..cfg.dim * rdim).map(|_| rng.normal() / (rdim as f64).sqrt()).collect();
        let mut space = FeatureSpace { dim: cfg.dim, embedder: Arc::new(embedder), grams, raw_mean, raw_scale, w_text, w_motion };
        let xs: Vec<Sparse> = captions.iter().map(|c| space.text_input(c)).collect();
        let zs: Vec<Vec<f64>> = raw.iter().map(|r| space.motion_input(r)).collect();

        let mut adam_t = Adam::new(space.w_text.len());
        let mut adam_m = Adam::new(space.w_motion.len());
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let bs = cfg.batch_size.min(xs.len());
        let mut cursor = order.len();
        for _ in 0..cfg.steps {
            if cursor + bs > order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let batch = &order[cursor..cursor + bs];
            cursor += bs;
            let bx: Vec<&Sparse> = batch.iter().map(|&i| &xs[i]).collect();
            let bz: Vec<&Vec<f64>> = batch.iter().map(|&i| &zs[i]).collect();
            let (_, gt, gm) = space.loss_grad(&bx, &bz, cfg.temperature);
            adam_t.step(&mut space.w_text, &gt, cfg.lr);
            adam_m.step(&mut space.w_motion, &gm, cfg.lr);
        }
        Ok(space)
    }

    /// Symmetric InfoNCE over a batch and its gradients w.r.t. both maps.
    fn loss_grad(&self, xs: &[&Sparse], zs: &[&Vec<f64>], tau: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let b = xs.len();
        let d = self.dim;
        let mut et = Vec::with_capacity(b);
        let mut nt = Vec::with_capacity(b);
        let mut em = Vec::with_capacity(b);
        let mut nm = Vec::with_capacity(b);
        for i in 0..b {
            let mut u = self.project_text(xs[i]);
            nt.push(normalize(&mut u));
            et.push(u);
            let mut v = self.project_motion(zs[i]);
            nm.push(normalize(&mut v));
            em.push(v);
        }
        let s: Vec<f64> = (0..b * b)
            .map(|ij| et[ij / b].iter().zip(&em[ij % b]).map(|(x, y)| x * y).sum::<f64>() / tau)
            .collect();
        let mut loss = 0.0;
        let mut gs = vec![0.0; b * b];
        let scale = 0.5 / b as f64;
        for i in 0..b {
            let row = &s[i * b..(i + 1) * b];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss -= scale * (row[i] - m - z.ln());
            for j in 0..b {
                gs[i * b + j] += scale * ((row[j] - m).exp() / z - f64::from(u8::from(i == j)));
            }
        }
        for j in 0..b {
            let m = (0..b).map(|i| s[i * b + j]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..b).map(|i| (s[i * b + j] - m).exp()).sum();
            loss -= scale * (s[j * b + j] - m - z.ln());
            for i in 0..b {
                gs[i * b + j] += scale * ((s[i * b + j] - m).exp() / z - f64::from(u8::from(i == j)));
            }
        }
        let g = self.grams.len();
        let r = self.raw_mean.len();
        let mut gw_t = vec![0.0; d * g];
        let mut gw_m = vec![0.0; d * r];
        for i in 0..b {
            // dL/de for both sides, then through the normalization
            let mut de_t = vec![0.0; d];
            let mut de_m = vec![0.0; d];
            for j in 0..b {
                for k in 0..d {
                    de_t[k] += gs[i * b + j] * em[j][k] / tau;
                    de_m[k] += gs[j * b + i] * et[j][k] / tau;
                }
            }
            let du_t = through_norm(&et[i], &de_t, nt[i]);
            let du_m = through_norm(&em[i], &de_m, nm[i]);
            for k in 0..d {
                for &(idx, v) in xs[i] {
                    gw_t[k * g + idx] += du_t[k] * v;
                }
                for (w, &zv) in gw_m[k * r..(k + 1) * r].iter_mut().zip(zs[i].iter()) {
                    *w += du_m[k] * zv;
                }
            }
        }
        (loss, gw_t, gw_m)
    }
}

fn through_norm(e: &[f64], de: &[f64], norm: f64) -> Vec<f64> {
    let dot: f64 = e.iter().zip(de).map(|(a, b)| a * b).sum();
    e.iter().zip(de).map(|(&ei, &gi)| (gi - ei * dot) / norm).collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2) = (0.9, 0.999);
        let c1 = 1.0 - f64::powi(b1, self.t);
        let c2 = 1.0 - f64::powi(b2, self.t);
        for (((w, m), v), &g) in w.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}
