use log::debug;

use super::{
    assign_task, backward, corrupt, forward_cached, masked_ce_grad, masked_cell_count, sample_mask, AdamW,
    DenoiserParams, Example, JointSequence, MaskSchedule, Real, Task, TrainConfig, TrainItem,
};
use crate::error::{DimoError, Result};
use crate::par;
use crate::rng::Rng;

/// Samples per parallel work unit. Fixed so the reduction order, and hence the
/// result, does not depend on the thread count.
const CHUNK: usize = 4;

/// Masks one side of `item` according to `task`. Fails with
/// [`DimoError::UndefinedLoss`] when the draw masks nothing.
pub fn build_example(
    item: &TrainItem,
    task: Task,
    schedule: MaskSchedule,
    mask_code: u32,
    rng: &mut Rng,
) -> Result<Example> {
    let seq = JointSequence::new(&item.text, &item.motion, item.levels, task)?;
    let (text_mask, motion_mask) = if task.masks_text() {
        (sample_mask(seq.text.len(), schedule, rng), vec![false; seq.motion_len()])
    } else {
        (vec![false; seq.text.len()], sample_mask(seq.motion_len(), schedule, rng))
    };
    let input = corrupt(&seq, &text_mask, &motion_mask, mask_code)?;
    if masked_cell_count(&input) == 0 {
        return Err(DimoError::UndefinedLoss);
    }
    Ok(Example { input, target_text: seq.text, target_motion: seq.motion })
}

/// Mean masked cross-entropy over all masked cells of the batch and its gradient.
pub fn batch_gradients<F: Real>(params: &DenoiserParams<F>, batch: &[Example]) -> Result<(f64, DenoiserParams<F>)> {
    let cells: usize = batch.iter().map(|e| masked_cell_count(&e.input)).sum();
    if cells == 0 {
        return Err(DimoError::UndefinedLoss);
    }
    let scale = 1.0 / cells as f64;
    let chunks: Vec<&[Example]> = batch.chunks(CHUNK).collect();
    let partial = par::map(&chunks, |chunk| -> Result<(f64, DenoiserParams<F>)> {
        let mut g = params.zeros_like();
        let mut sum = 0.0;
        for ex in chunk.iter() {
            let (logits, cache) = forward_cached(params, &ex.input.text, &ex.input.motion)?;
            let (s, dlogits) = masked_ce_grad(&logits, ex, scale);
            sum += s;
            backward(params, &cache, &dlogits, &mut g);
        }
        Ok((sum, g))
    });
    let mut total = 0.0;
    let mut grads: Option<DenoiserParams<F>> = None;
    for r in partial {
        let (s, g) = r?;
        total += s;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.add_scaled(F::one(), &g),
        }
    }
    Ok((total * scale, grads.expect("non-empty batch")))
}

/// Mean masked cross-entropy, no gradients.
pub fn batch_loss<F: Real>(params: &DenoiserParams<F>, batch: &[Example]) -> Result<f64> {
    let cells: usize = batch.iter().map(|e| masked_cell_count(&e.input)).sum();
    if cells == 0 {
        return Err(DimoError::UndefinedLoss);
    }
    let sums = par::map(batch, |ex| -> Result<f64> {
        let (logits, _) = forward_cached(params, &ex.input.text, &ex.input.motion)?;
        Ok(super::masked_ce_loss(&logits, ex)? * masked_cell_count(&ex.input) as f64)
    });
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / cells as f64)
}

/// Multi-task masked-denoising trainer.
#[derive(Debug, Clone)]
pub struct Trainer<F> {
    pub params: DenoiserParams<F>,
    pub optimizer: AdamW<F>,
    pub config: TrainConfig,
    rng: Rng,
    pub losses: Vec<f64>,
}

impl<F: Real> Trainer<F> {
    pub fn new(params: DenoiserParams<F>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(&params, &config);
        let rng = Rng::derive(config.seed, 0x7472_6169_6e);
        Ok(Trainer { params, optimizer, config, rng, losses: Vec::new() })
    }

    pub fn step_count(&self) -> usize {
        self.optimizer.steps_taken()
    }

    /// Draws `batch_size` items with replacement, a task for each, and a mask.
    /// Draws that mask nothing are skipped, so the batch can come up short.
    pub fn sample_batch(&mut self, items: &[TrainItem]) -> Result<Vec<Example>> {
        if items.is_empty() {
            return Err(DimoError::EmptyInput("no training items".into()));
        }
        let mask_code = self.params.config.mask_code();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let item = &items[self.rng.below(items.len())];
            let task = assign_task(&self.config.ratios, &mut self.rng);
            match build_example(item, task, self.config.schedule, mask_code, &mut self.rng) {
                Ok(ex) => batch.push(ex),
                Err(DimoError::UndefinedLoss) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(batch)
    }

    /// One optimizer update on a freshly sampled batch; returns the batch loss.
    pub fn train_step(&mut self, items: &[TrainItem]) -> Result<f64> {
        let batch = self.sample_batch(items)?;
        self.step_on(&batch)
    }

    /// One optimizer update on a given batch.
    pub fn step_on(&mut self, batch: &[Example]) -> Result<f64> {
        let (loss, grads) = batch_gradients(&self.params, batch)?;
        if !loss.is_finite() {
            return Err(DimoError::Numeric(format!("loss became {loss} at step {}", self.step_count())));
        }
        let norm = self.optimizer.step(&mut self.params, &grads);
        debug!("step {} loss {loss:.4} grad_norm {norm:.3}", self.step_count());
        self.losses.push(loss);
        Ok(loss)
    }

    /// Runs `steps` updates, calling `on_step(step, loss)` after each.
    pub fn fit(&mut self, items: &[TrainItem], steps: usize, mut on_step: impl FnMut(usize, f64)) -> Result<()> {
        for _ in 0..steps {
            let loss = self.train_step(items)?;
            on_step(self.step_count(), loss);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            text_vocab: 10,
            max_text: 4,
            levels: 2,
            codebook: 6,
            max_motion: 5,
            d_model: 16,
            layers: 1,
            heads: 2,
            ffn: 32,
            level_encoder_depth: 0,
        }
    }

    fn items() -> Vec<TrainItem> {
        vec![
            TrainItem { text: vec![4, 5, 0, 0], motion: vec![0, 1, 2, 3, 0, 1], levels: 2 },
            TrainItem { text: vec![6, 7, 8, 0], motion: vec![4, 5, 4, 5, 4, 5, 4, 5], levels: 2 },
        ]
    }

    #[test]
    fn memorizes_two_pairs() {
        let p = DenoiserParams::<f32>::init(tiny(), 1).unwrap();
        let cfg = TrainConfig { steps: 150, batch_size: 8, lr: 3e-3, warmup: 10, ..TrainConfig::default() };
        let mut tr = Trainer::new(p, cfg).unwrap();
        tr.fit(&items(), 150, |_, _| {}).unwrap();
        let first: f64 = tr.losses[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = tr.losses[140..].iter().sum::<f64>() / 10.0;
        assert!(last < 0.3 * first, "first {first} last {last}");
    }

    #[test]
    fn batch_gradient_independent_of_threads() {
        let p = DenoiserParams::<f32>::init(tiny(), 1).unwrap();
        let mut tr = Trainer::new(p.clone(), TrainConfig { batch_size: 12, ..TrainConfig::default() }).unwrap();
        let batch = tr.sample_batch(&items()).unwrap();
        let a = par::with_threads(1, || batch_gradients(&p, &batch).unwrap());
        let b = par::with_threads(3, || batch_gradients(&p, &batch).unwrap());
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn m2t_examples_mask_only_text() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            match build_example(&items()[1], Task::M2T, MaskSchedule::Linear, 6, &mut rng) {
                Ok(ex) => {
                    assert_eq!(ex.input.masked_timesteps(), 0);
                    assert!(ex.input.masked_text() > 0);
                }
                Err(DimoError::UndefinedLoss) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}
