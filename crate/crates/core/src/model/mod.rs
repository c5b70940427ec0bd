//! Bidirectional masked denoiser over a joint text + motion-token sequence.
//!
//! The sequence is `max_text` caption slots, one `[SEP]`, then one slot per
//! motion timestep. A motion slot embeds all RVQ levels of that timestep as a
//! softmax-weighted sum of per-level embeddings (optionally passed through a
//! small per-level encoder first). The output has one text head and one head
//! per RVQ level. Forward and backward passes are written by hand and are
//! generic over [`Real`] so the same code trains in `f32` and is checked
//! against finite differences in `f64`.

mod checkpoint;
mod config;
mod forward;
mod loss;
pub mod ops;
mod optim;
mod params;
mod sequence;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{MaskSchedule, ModelConfig, TaskRatios, TrainConfig};
pub use forward::{backward, forward, forward_cached, ForwardCache, Logits};
pub use loss::{masked_ce_grad, masked_ce_loss, masked_cell_count};
pub use optim::AdamW;
pub use params::{BlockIds, DenoiserParams, ParamLayout};
pub use sequence::{
    assign_task, corrupt, mask_rate, sample_mask, sample_mask_with_rate, Example, JointSequence, Task, TrainItem,
};
pub use train::{batch_gradients, batch_loss, build_example, Trainer};

use num_traits::Float;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Scalar type the denoiser is generic over.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + std::fmt::Debug + Default + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}
