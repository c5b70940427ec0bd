use super::ops::{logsumexp_f64, softmax_f64};
use super::{Example, JointSequence, Logits, Real};
use crate::error::{DimoError, Result};

/// Masked caption slots plus masked timesteps times RVQ depth.
pub fn masked_cell_count(input: &JointSequence) -> usize {
    input.masked_text() + input.masked_timesteps() * input.levels
}

/// Mean cross-entropy over masked cells.
pub fn masked_ce_loss<F: Real>(logits: &Logits<F>, ex: &Example) -> Result<f64> {
    let cells = masked_cell_count(&ex.input);
    if cells == 0 {
        return Err(DimoError::UndefinedLoss);
    }
    let mut sum = 0.0;
    visit_masked(logits, ex, |row, target| {
        sum += logsumexp_f64(row) - row[target].f64();
    });
    Ok(sum / cells as f64)
}

/// Summed cross-entropy over masked cells and `scale · ∂(sum)/∂logits`.
pub fn masked_ce_grad<F: Real>(logits: &Logits<F>, ex: &Example, scale: f64) -> (f64, Logits<F>) {
    let mut grad = logits.zeros_like();
    let mut sum = 0.0;
    let levels = ex.input.levels;
    for (i, &m) in ex.input.text_mask.iter().enumerate() {
        if m {
            let row = logits.text_row(i);
            let target = ex.target_text[i] as usize;
            sum += logsumexp_f64(row) - row[target].f64();
            fill_grad(grad.text_row_mut(i), &softmax_f64(row), target, scale);
        }
    }
    for (t, &m) in ex.input.motion_mask.iter().enumerate() {
        if m {
            for l in 0..levels {
                let row = logits.motion_row(t, l);
                let target = ex.target_motion[t * levels + l] as usize;
                sum += logsumexp_f64(row) - row[target].f64();
                fill_grad(grad.motion_row_mut(t, l), &softmax_f64(row), target, scale);
            }
        }
    }
    (sum, grad)
}

fn fill_grad<F: Real>(out: &mut [F], p: &[f64], target: usize, scale: f64) {
    for (j, (o, &pj)) in out.iter_mut().zip(p).enumerate() {
        let g = if j == target { pj - 1.0 } else { pj };
        *o = F::of(g * scale);
    }
}

fn visit_masked<F: Real>(logits: &Logits<F>, ex: &Example, mut f: impl FnMut(&[F], usize)) {
    let levels = ex.input.levels;
    for (i, &m) in ex.input.text_mask.iter().enumerate() {
        if m {
            f(logits.text_row(i), ex.target_text[i] as usize);
        }
    }
    for (t, &m) in ex.input.motion_mask.iter().enumerate() {
        if m {
            for l in 0..levels {
                f(logits.motion_row(t, l), ex.target_motion[t * levels + l] as usize);
            }
        }
    }
}
