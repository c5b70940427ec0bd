//! Residual vector quantization of motion clips.
//!
//! A clip of `frames × channels` values is cut into non-overlapping windows of
//! `r` frames; each window becomes one `channels · r` vector. Layer 0 quantizes
//! the vector, layer 1 quantizes what layer 0 left over, and so on for `R`
//! layers. A clip therefore maps to a `⌊frames / r⌋ × R` grid of codebook
//! indices, and decoding sums the selected codewords back up.

mod io;
mod train;

pub use io::{read_codebooks, write_codebooks, CODEBOOK_MAGIC};
pub use train::{train_codebooks, EmaConfig};

use crate::error::{DimoError, Result};
use crate::par;

pub const DEFAULT_CHANNELS: usize = 8;
pub const DEFAULT_FPS: f32 = 20.0;

/// Continuous multichannel motion, row-major `frames × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub channels: usize,
    pub fps: f32,
    pub data: Vec<f32>,
}

impl MotionClip {
    pub fn new(channels: usize, fps: f32, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.is_empty() {
            return Err(DimoError::EmptyInput("motion clip has no frames".into()));
        }
        if data.len() % channels != 0 {
            return Err(DimoError::CorruptInput(format!(
                "{} values do not divide into {} channels",
                data.len(),
                channels
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(DimoError::Numeric(format!("non-finite motion value at {bad}")));
        }
        Ok(MotionClip { channels, fps, data })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Keeps the first `frames` frames.
    pub fn truncated(&self, frames: usize) -> MotionClip {
        MotionClip {
            channels: self.channels,
            fps: self.fps,
            data: self.data[..frames * self.channels].to_vec(),
        }
    }
}

/// Codebook indices of one clip, row-major `length × levels`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    pub length: usize,
    pub levels: usize,
    pub indices: Vec<u32>,
}

impl TokenGrid {
    pub fn new(length: usize, levels: usize, indices: Vec<u32>) -> Result<Self> {
        if length == 0 {
            return Err(DimoError::EmptyInput("token grid has no rows".into()));
        }
        if indices.len() != length * levels {
            return Err(DimoError::CorruptGrid(format!(
                "expected {} indices, got {}",
                length * levels,
                indices.len()
            )));
        }
        Ok(TokenGrid { length, levels, indices })
    }

    pub fn get(&self, t: usize, level: usize) -> u32 {
        self.indices[t * self.levels + level]
    }

    pub fn row(&self, t: usize) -> &[u32] {
        &self.indices[t * self.levels..(t + 1) * self.levels]
    }
}

/// Trained residual codebooks.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebooks {
    pub layers: usize,
    pub size: usize,
    pub dim: usize,
    pub ratio: usize,
    /// `layers × size × dim`, layer-major.
    pub codewords: Vec<f32>,
    /// `layers × size` EMA assignment counts from training (zero when loaded from disk).
    pub ema_counts: Vec<f32>,
}

impl RvqCodebooks {
    pub fn from_codewords(
        layers: usize,
        size: usize,
        dim: usize,
        ratio: usize,
        codewords: Vec<f32>,
    ) -> Result<Self> {
        if layers == 0 || size < 2 || dim == 0 || ratio == 0 {
            return Err(DimoError::Config(format!(
                "invalid codebook shape R={layers} N={size} dim={dim} r={ratio}"
            )));
        }
        if codewords.len() != layers * size * dim {
            return Err(DimoError::Format(format!(
                "expected {} codeword values, got {}",
                layers * size * dim,
                codewords.len()
            )));
        }
        if codewords.iter().any(|v| !v.is_finite()) {
            return Err(DimoError::Numeric("non-finite codeword".into()));
        }
        Ok(RvqCodebooks {
            layers,
            size,
            dim,
            ratio,
            codewords,
            ema_counts: vec![0.0; layers * size],
        })
    }

    pub fn codeword(&self, layer: usize, k: usize) -> &[f32] {
        let off = (layer * self.size + k) * self.dim;
        &self.codewords[off..off + self.dim]
    }

    /// Channels per frame implied by `dim / ratio`.
    pub fn channels(&self) -> usize {
        self.dim / self.ratio
    }

    /// The first `layers` layers as a standalone stack.
    pub fn truncated(&self, layers: usize) -> RvqCodebooks {
        let layers = layers.min(self.layers);
        RvqCodebooks {
            layers,
            size: self.size,
            dim: self.dim,
            ratio: self.ratio,
            codewords: self.codewords[..layers * self.size * self.dim].to_vec(),
            ema_counts: self.ema_counts[..layers * self.size].to_vec(),
        }
    }

    /// Index of the nearest codeword of `layer` to `v`; ties go to the lowest index.
    pub fn nearest(&self, layer: usize, v: &[f64]) -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size {
            let c = self.codeword(layer, k);
            let mut d = 0.0;
            for (x, &y) in v.iter().zip(c) {
                let e = x - y as f64;
                d += e * e;
            }
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        (best, best_d)
    }

    /// Quantizes one window vector; returns per-layer indices and the final residual.
    pub fn quantize(&self, v: &[f32]) -> (Vec<u32>, Vec<f64>) {
        let mut residual: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let mut idx = Vec::with_capacity(self.layers);
        for layer in 0..self.layers {
            let (k, _) = self.nearest(layer, &residual);
            for (r, &c) in residual.iter_mut().zip(self.codeword(layer, k)) {
                *r -= c as f64;
            }
            idx.push(k as u32);
        }
        (idx, residual)
    }
}

/// Stacks non-overlapping windows of `r` frames into vectors of `channels · r`
/// values, frame-major. Trailing frames that do not fill a window are dropped.
pub fn frame_stack(clip: &MotionClip, r: usize) -> Result<Vec<Vec<f32>>> {
    if r == 0 {
        return Err(DimoError::Config("downsample ratio must be ≥ 1".into()));
    }
    let frames = clip.frames();
    if frames < r {
        return Err(DimoError::EmptyInput(format!(
            "{frames} frames cannot fill a window of {r}"
        )));
    }
    let width = clip.channels * r;
    Ok(clip
        .data
        .chunks_exact(width)
        .map(|w| w.to_vec())
        .collect())
}

fn check_dims(clip: &MotionClip, books: &RvqCodebooks) -> Result<()> {
    if clip.channels * books.ratio != books.dim {
        return Err(DimoError::Config(format!(
            "clip has {} channels × r={} but codebooks expect dim {}",
            clip.channels, books.ratio, books.dim
        )));
    }
    Ok(())
}

/// Encodes a clip into a token grid.
pub fn encode(clip: &MotionClip, books: &RvqCodebooks) -> Result<TokenGrid> {
    check_dims(clip, books)?;
    let windows = frame_stack(clip, books.ratio)?;
    let mut indices = Vec::with_capacity(windows.len() * books.layers);
    for w in &windows {
        indices.extend(books.quantize(w).0);
    }
    TokenGrid::new(windows.len(), books.layers, indices)
}

/// Encodes many clips; per-clip output is independent of the thread count.
pub fn encode_batch(clips: &[MotionClip], books: &RvqCodebooks) -> Result<Vec<TokenGrid>> {
    par::map(clips, |c| encode(c, books)).into_iter().collect()
}

/// Reconstructs motion by summing the selected codewords of every layer.
pub fn decode(grid: &TokenGrid, books: &RvqCodebooks, fps: f32) -> Result<MotionClip> {
    if grid.levels > books.layers {
        return Err(DimoError::CorruptGrid(format!(
            "grid has {} levels, codebooks only {}",
            grid.levels, books.layers
        )));
    }
    if let Some(&bad) = grid.indices.iter().find(|&&i| i as usize >= books.size) {
        return Err(DimoError::CorruptGrid(format!(
            "index {bad} out of range for codebook size {}",
            books.size
        )));
    }
    let mut data = Vec::with_capacity(grid.length * books.dim);
    let mut acc = vec![0f64; books.dim];
    for t in 0..grid.length {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (layer, &k) in grid.row(t).iter().enumerate() {
            for (a, &c) in acc.iter_mut().zip(books.codeword(layer, k as usize)) {
                *a += c as f64;
            }
        }
        data.extend(acc.iter().map(|&a| a as f32));
    }
    MotionClip::new(books.channels(), fps, data)
}

/// Mean squared error between a clip and its reconstruction over the frames
/// the grid covers.
pub fn reconstruction_mse(clip: &MotionClip, books: &RvqCodebooks) -> Result<f64> {
    let grid = encode(clip, books)?;
    let recon = decode(&grid, books, clip.fps)?;
    let n = recon.data.len();
    let sse: f64 = clip.data[..n]
        .iter()
        .zip(&recon.data)
        .map(|(&a, &b)| {
            let e = a as f64 - b as f64;
            e * e
        })
        .sum();
    Ok(sse / n as f64)
}

/// Mean reconstruction MSE over a set of clips, weighted by element count.
pub fn mean_reconstruction_mse(clips: &[MotionClip], books: &RvqCodebooks) -> Result<f64> {
    let per: Vec<Result<(f64, usize)>> = par::map(clips, |c| {
        let n = (c.frames() / books.ratio) * books.dim;
        reconstruction_mse(c, books).map(|m| (m * n as f64, n))
    });
    let mut sse = 0.0;
    let mut count = 0usize;
    for r in per {
        let (s, n) = r?;
        sse += s;
        count += n;
    }
    if count == 0 {
        return Err(DimoError::EmptyInput("no windows to evaluate".into()));
    }
    Ok(sse / count as f64)
}

/// Token and bit rates of a codebook stack at `fps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenRate {
    pub tokens_per_second: f64,
    pub bits_per_second: f64,
}

pub fn token_rate(layers: usize, ratio: usize, size: usize, fps: f64) -> TokenRate {
    let tokens_per_second = fps * layers as f64 / ratio as f64;
    TokenRate {
        tokens_per_second,
        bits_per_second: tokens_per_second * (size as f64).log2(),
    }
}

impl RvqCodebooks {
    pub fn token_rate(&self, fps: f64) -> TokenRate {
        token_rate(self.layers, self.ratio, self.size, fps)
    }
}
