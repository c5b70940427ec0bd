use super::{DenoiserParams, Real, TrainConfig};

/// Adam with decoupled weight decay, linear warmup and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    /// Linear decay to zero over this many updates; 0 keeps the rate constant.
    pub decay_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl<F: Real> AdamW<F> {
    pub fn new(params: &DenoiserParams<F>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<F>> = params.tensors.iter().map(|t| vec![F::zero(); t.len()]).collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            warmup: cfg.warmup,
            decay_steps: if cfg.lr_decay { cfg.steps } else { 0 },
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            clip_norm: cfg.clip_norm,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate used by update number `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = if self.warmup == 0 { 1.0 } else { ((step + 1) as f64 / self.warmup as f64).min(1.0) };
        let decay = if self.decay_steps == 0 { 1.0 } else { (1.0 - step as f64 / self.decay_steps as f64).max(0.0) };
        self.lr * warm * decay
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut DenoiserParams<F>, grads: &DenoiserParams<F>) -> f64 {
        let norm = grads.sq_norm().sqrt();
        let clip = if self.clip_norm > 0.0 && norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        let lr = self.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (c1, c2) = (F::one() - b1, F::one() - b2);
        let step_size = F::of(lr / bc1);
        let inv_bc2 = F::of(1.0 / bc2);
        let eps = F::of(self.eps);
        let clip = F::of(clip);
        for i in 0..params.tensors.len() {
            let decay = F::of(lr * self.weight_decay);
            let decays = params.layout.decays(i) && self.weight_decay > 0.0;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = &mut params.tensors[i];
            for (((pj, mj), vj), &gj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&grads.tensors[i]) {
                let g = gj * clip;
                *mj = b1 * *mj + c1 * g;
                *vj = b2 * *vj + c2 * g * g;
                if decays {
                    *pj -= decay * *pj;
                }
                *pj -= step_size * *mj / ((*vj * inv_bc2).sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig { d_model: 8, heads: 2, ffn: 8, layers: 1, codebook: 4, max_motion: 3, ..ModelConfig::default() }
    }

    #[test]
    fn zero_lr_leaves_weights_untouched() {
        let mut p = DenoiserParams::<f32>::init(tiny(), 2).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors.iter_mut().flatten().for_each(|v| *v = 0.3);
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        let mut opt = AdamW::new(&p, &cfg);
        for _ in 0..3 {
            opt.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = DenoiserParams::<f64>::init(tiny(), 2).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors.iter_mut().flatten().for_each(|v| *v = 1e-3);
        let cfg = TrainConfig { lr: 0.01, warmup: 0, weight_decay: 0.0, clip_norm: 0.0, ..TrainConfig::default() };
        let mut opt = AdamW::new(&p, &cfg);
        opt.step(&mut p, &g);
        for (a, b) in p.tensors.iter().flatten().zip(before.tensors.iter().flatten()) {
            assert!((b - a - 0.01).abs() < 1e-6);
        }
    }
}
