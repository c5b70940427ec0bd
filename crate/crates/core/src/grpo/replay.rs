use crate::corpus::NULL;
use crate::decode::{commit_distribution, uses_guidance, DecodeTrace, Side};
use crate::error::{DimoError, Result};
use crate::model::{backward, forward, forward_cached, DenoiserParams, ForwardCache, JointSequence, Logits, Real};

/// One replayed step: caches for backward plus logit gradients of the step's
/// log-probability and KL contributions.
struct StepGrad<F> {
    cond: (ForwardCache<F>, Logits<F>, Logits<F>),
    uncond: Option<(ForwardCache<F>, Logits<F>, Logits<F>)>,
}

/// A decode trace re-scored under some parameters.
pub struct Replay<F> {
    /// Σ log p_θ over committed cells.
    pub logprob: f64,
    /// Σ KL(p_θ ‖ p_ref) over committed cells; 0 without a reference.
    pub kl_sum: f64,
    pub cells: usize,
    steps: Vec<StepGrad<F>>,
}

fn cell_rows<F: Real>(l: &Logits<F>, side: Side, pos: usize, level: usize) -> &[F] {
    match side {
        Side::Text => l.text_row(pos),
        Side::Motion => l.motion_row(pos, level),
    }
}

fn cell_rows_mut<F: Real>(l: &mut Logits<F>, side: Side, pos: usize, level: usize) -> &mut [F] {
    match side {
        Side::Text => l.text_row_mut(pos),
        Side::Motion => l.motion_row_mut(pos, level),
    }
}

fn null_text(state: &JointSequence) -> Vec<u32> {
    vec![NULL; state.text.len()]
}

/// Σ p (ln p − ln q), skipping zero-probability terms of p.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a.ln() - b.ln())).sum()
}

/// Re-scores `trace` under `params`. With `reference`, also accumulates the
/// per-cell KL to the reference's commit distributions. With `keep_grad`,
/// retains what [`Replay::backward`] needs.
pub fn replay<F: Real>(
    params: &DenoiserParams<F>,
    reference: Option<&DenoiserParams<F>>,
    trace: &DecodeTrace,
    keep_grad: bool,
) -> Result<Replay<F>> {
    let cfg = &trace.config;
    let side = trace.side;
    let per = trace.cells_per_position();
    let temp = if cfg.temperature > 0.0 { cfg.temperature } else { 1.0 };
    let mut out = Replay { logprob: 0.0, kl_sum: 0.0, cells: 0, steps: Vec::new() };
    for (state, step) in trace.states()?.iter().zip(&trace.steps) {
        if step.committed.is_empty() {
            continue;
        }
        let guided = uses_guidance(state, side, cfg);
        let (cond, cond_cache) = forward_cached(params, &state.text, &state.motion)?;
        let uncond = if guided { Some(forward_cached(params, &null_text(state), &state.motion)?) } else { None };
        let refs = match reference {
            Some(r) => {
                let c = forward(r, &state.text, &state.motion)?;
                let u = if guided { Some(forward(r, &null_text(state), &state.motion)?) } else { None };
                Some((c, u))
            }
            None => None,
        };
        let mut d_lp = (cond.zeros_like(), uncond.as_ref().map(|(u, _)| u.zeros_like()));
        let mut d_kl = (cond.zeros_like(), uncond.as_ref().map(|(u, _)| u.zeros_like()));
        for (j, &pos) in step.committed.iter().enumerate() {
            for level in 0..per {
                let value = *step.values.get(j * per + level).ok_or_else(|| DimoError::CorruptInput("short trace step".into()))?;
                let c_row = cell_rows(&cond, side, pos, level);
                let u_row = uncond.as_ref().map(|(u, _)| cell_rows(u, side, pos, level));
                let p = commit_distribution(c_row, u_row, side, cfg)?;
                let v = value as usize;
                if v >= p.len() {
                    return Err(DimoError::CorruptInput(format!("trace value {value} out of range")));
                }
                out.logprob += p[v].ln();
                out.cells += 1;
                let kl_grad = match &refs {
                    Some((rc, ru)) => {
                        let q = commit_distribution(
                            cell_rows(rc, side, pos, level),
                            ru.as_ref().map(|u| cell_rows(u, side, pos, level)),
                            side,
                            cfg,
                        )?;
                        let kl = kl_divergence(&p, &q);
                        out.kl_sum += kl;
                        Some(
                            p.iter()
                                .zip(&q)
                                .map(|(&a, &b)| if a > 0.0 { a * (a.ln() - b.ln() - kl) / temp } else { 0.0 })
                                .collect::<Vec<f64>>(),
                        )
                    }
                    None => None,
                };
                if !keep_grad {
                    continue;
                }
                // d log p'(v) / dz = (onehot − p') / T, also with PAD reweighting
                let g_lp: Vec<f64> = p.iter().enumerate().map(|(k, &pk)| (f64::from(u8::from(k == v)) - pk) / temp).collect();
                let scale = cfg.cfg_scale;
                let scatter = |d: &mut (Logits<F>, Option<Logits<F>>), g: &[f64]| {
                    let (c_w, u_w) = if guided { (scale, 1.0 - scale) } else { (1.0, 0.0) };
                    for (x, &gk) in cell_rows_mut(&mut d.0, side, pos, level).iter_mut().zip(g) {
                        *x += F::of(c_w * gk);
                    }
                    if let Some(du) = d.1.as_mut() {
                        for (x, &gk) in cell_rows_mut(du, side, pos, level).iter_mut().zip(g) {
                            *x += F::of(u_w * gk);
                        }
                    }
                };
                scatter(&mut d_lp, &g_lp);
                if let Some(g) = kl_grad {
                    scatter(&mut d_kl, &g);
                }
            }
        }
        if keep_grad {
            let uncond_part = match (uncond, d_lp.1, d_kl.1) {
                (Some((_, cache)), Some(a), Some(b)) => Some((cache, a, b)),
                _ => None,
            };
            out.steps.push(StepGrad { cond: (cond_cache, d_lp.0, d_kl.0), uncond: uncond_part });
        }
    }
    if !out.logprob.is_finite() || !out.kl_sum.is_finite() {
        return Err(DimoError::Numeric("non-finite replay log-probability or KL".into()));
    }
    Ok(out)
}

impl<F: Real> Replay<F> {
    /// Accumulates `w_lp·∇logprob + w_kl·∇kl_sum` into `grads`.
    pub fn backward(&self, params: &DenoiserParams<F>, w_lp: f64, w_kl: f64, grads: &mut DenoiserParams<F>) {
        let combine = |lp: &Logits<F>, kl: &Logits<F>| {
            let mut d = lp.clone();
            for (x, &k) in d.text.iter_mut().zip(&kl.text) {
                *x = F::of(w_lp * x.f64() + w_kl * k.f64());
            }
            for (x, &k) in d.motion.iter_mut().zip(&kl.motion) {
                *x = F::of(w_lp * x.f64() + w_kl * k.f64());
            }
            d
        };
        for s in &self.steps {
            let (cache, lp, kl) = &s.cond;
            backward(params, cache, &combine(lp, kl), grads);
            if let Some((cache, lp, kl)) = &s.uncond {
                backward(params, cache, &combine(lp, kl), grads);
            }
        }
    }
}

/// Σ log p_θ(token | step state) over every committed cell of the trace.
pub fn sequence_logprob<F: Real>(params: &DenoiserParams<F>, trace: &DecodeTrace) -> Result<f64> {
    Ok(replay(params, None, trace, false)?.logprob)
}
