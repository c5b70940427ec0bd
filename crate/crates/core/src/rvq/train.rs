use super::RvqCodebooks;
use crate::error::{DimoError, Result};
use crate::par;
use crate::rng::Rng;

/// Per-layer EMA k-means settings.
#[derive(Debug, Clone)]
pub struct EmaConfig {
    pub decay: f64,
    pub iterations: usize,
    /// A codeword whose EMA usage falls below `dead_threshold × mean usage` is reseeded.
    pub dead_threshold: f64,
    pub seed: u64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        EmaConfig {
            decay: 0.99,
            iterations: 60,
            dead_threshold: 1e-3,
            seed: 0,
        }
    }
}

/// Trains `layers` codebooks of `size` codewords on window vectors.
///
/// Layer `ℓ` is fit on the residuals left after quantizing with layers `< ℓ`.
/// Each layer runs EMA k-means: EMA statistics start at zero so the first
/// update is an exact Lloyd step, and later updates blend in history with
/// `decay`. Layer streams are derived from `(seed, ℓ)`, so the first `k`
/// layers of a deeper stack are identical to a `k`-layer stack.
pub fn train_codebooks(
    vectors: &[Vec<f32>],
    layers: usize,
    size: usize,
    ratio: usize,
    config: &EmaConfig,
) -> Result<RvqCodebooks> {
    if layers == 0 {
        return Err(DimoError::Config("need at least one RVQ layer".into()));
    }
    if size < 2 {
        return Err(DimoError::Config("codebook size must be ≥ 2".into()));
    }
    if vectors.len() < size {
        return Err(DimoError::InsufficientData {
            needed: size,
            got: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(DimoError::Config("training vectors must share one nonzero dimension".into()));
    }
    if dim % ratio != 0 {
        return Err(DimoError::Config(format!("dim {dim} not divisible by ratio {ratio}")));
    }

    let mut residuals: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().map(|&x| x as f64).collect())
        .collect();
    let mut codewords = Vec::with_capacity(layers * size * dim);
    let mut counts = Vec::with_capacity(layers * size);

    for layer in 0..layers {
        let mut rng = Rng::derive(config.seed, layer as u64);
        let (words, usage) = fit_layer(&residuals, size, dim, config, &mut rng);
        let single = RvqCodebooks {
            layers: 1,
            size,
            dim,
            ratio,
            codewords: words.iter().map(|&w| w as f32).collect(),
            ema_counts: vec![0.0; size],
        };
        let assigned: Vec<usize> = par::map(&residuals, |r| single.nearest(0, r).0);
        for (r, &k) in residuals.iter_mut().zip(&assigned) {
            for (x, &c) in r.iter_mut().zip(single.codeword(0, k)) {
                *x -= c as f64;
            }
        }
        codewords.extend(single.codewords);
        counts.extend(usage.iter().map(|&u| u as f32));
    }

    let mut books = RvqCodebooks::from_codewords(layers, size, dim, ratio, codewords)?;
    books.ema_counts = counts;
    Ok(books)
}

fn fit_layer(
    data: &[Vec<f64>],
    size: usize,
    dim: usize,
    config: &EmaConfig,
    rng: &mut Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut words = vec![0f64; size * dim];
    for (k, i) in rng.sample_distinct(data.len(), size).into_iter().enumerate() {
        words[k * dim..(k + 1) * dim].copy_from_slice(&data[i]);
    }
    let mut ema_n = vec![0f64; size];
    let mut ema_sum = vec![0f64; size * dim];
    let decay = config.decay;

    for it in 0..config.iterations.max(1) {
        let view = RvqCodebooks {
            layers: 1,
            size,
            dim,
            ratio: 1,
            codewords: words.iter().map(|&w| w as f32).collect(),
            ema_counts: Vec::new(),
        };
        // Assignment uses the f32-rounded codewords, matching what `encode` sees.
        let assigned: Vec<usize> = par::map(data, |v| view.nearest(0, v).0);

        let mut n = vec![0f64; size];
        let mut sums = vec![0f64; size * dim];
        for (v, &k) in data.iter().zip(&assigned) {
            n[k] += 1.0;
            for (s, &x) in sums[k * dim..(k + 1) * dim].iter_mut().zip(v) {
                *s += x;
            }
        }
        for k in 0..size {
            ema_n[k] = decay * ema_n[k] + (1.0 - decay) * n[k];
            for j in 0..dim {
                let e = &mut ema_sum[k * dim + j];
                *e = decay * *e + (1.0 - decay) * sums[k * dim + j];
            }
            if ema_n[k] > 0.0 {
                for j in 0..dim {
                    words[k * dim + j] = ema_sum[k * dim + j] / ema_n[k];
                }
            }
        }

        if it + 1 < config.iterations {
            let mean_usage = ema_n.iter().sum::<f64>() / size as f64;
            for k in 0..size {
                if ema_n[k] < config.dead_threshold * mean_usage {
                    let src = &data[rng.below(data.len())];
                    words[k * dim..(k + 1) * dim].copy_from_slice(src);
                    ema_n[k] = 0.0;
                    ema_sum[k * dim..(k + 1) * dim].iter_mut().for_each(|s| *s = 0.0);
                }
            }
        }
    }
    (words, ema_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvq::{encode, reconstruction_mse, MotionClip};

    fn two_clusters(seed: u64) -> (Vec<Vec<f32>>, [f64; 2], [f64; 2]) {
        let mut rng = Rng::new(seed);
        let mut data = Vec::new();
        for i in 0..200 {
            let (cx, cy) = if i % 2 == 0 { (-3.0, 1.0) } else { (4.0, -2.0) };
            data.push(vec![
                (cx + 0.2 * rng.normal()) as f32,
                (cy + 0.2 * rng.normal()) as f32,
            ]);
        }
        // Brute-force cluster means: membership is known by construction and the
        // clusters are far enough apart that the optimal 2-means partition is this one.
        let mean = |parity: usize| {
            let pts: Vec<&Vec<f32>> = data.iter().skip(parity).step_by(2).collect();
            let n = pts.len() as f64;
            [
                pts.iter().map(|p| p[0] as f64).sum::<f64>() / n,
                pts.iter().map(|p| p[1] as f64).sum::<f64>() / n,
            ]
        };
        let (a, b) = (mean(0), mean(1));
        (data, a, b)
    }

    #[test]
    fn two_clusters_converge_to_means() {
        let (data, a, b) = two_clusters(5);
        let cfg = EmaConfig { iterations: 50, ..EmaConfig::default() };
        let books = train_codebooks(&data, 1, 2, 1, &cfg).unwrap();
        let mut words: Vec<[f64; 2]> = (0..2)
            .map(|k| {
                let c = books.codeword(0, k);
                [c[0] as f64, c[1] as f64]
            })
            .collect();
        words.sort_by(|x, y| x[0].partial_cmp(&y[0]).unwrap());
        for (w, m) in words.iter().zip([a, b]) {
            assert!((w[0] - m[0]).abs() < 1e-3 && (w[1] - m[1]).abs() < 1e-3, "{w:?} vs {m:?}");
        }
    }

    #[test]
    fn memorizes_distinct_points() {
        let data: Vec<Vec<f32>> = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![5.0, 5.0], vec![-4.0, 0.5]];
        let books = train_codebooks(&data, 1, 4, 1, &EmaConfig::default()).unwrap();
        for v in &data {
            let clip = MotionClip::new(2, 20.0, v.clone()).unwrap();
            assert_eq!(reconstruction_mse(&clip, &books).unwrap(), 0.0);
        }
    }

    #[test]
    fn insufficient_data() {
        let data = vec![vec![0.0f32; 2]; 3];
        assert!(matches!(
            train_codebooks(&data, 1, 4, 1, &EmaConfig::default()),
            Err(DimoError::InsufficientData { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn deeper_stack_shares_prefix_and_is_deterministic() {
        let (data, _, _) = two_clusters(9);
        let cfg = EmaConfig { iterations: 10, seed: 4, ..EmaConfig::default() };
        let one = train_codebooks(&data, 1, 4, 1, &cfg).unwrap();
        let three = train_codebooks(&data, 3, 4, 1, &cfg).unwrap();
        assert_eq!(three.truncated(1).codewords, one.codewords);
        assert_eq!(train_codebooks(&data, 3, 4, 1, &cfg).unwrap(), three);
        let clip = MotionClip::new(2, 20.0, data[0].clone()).unwrap();
        assert_eq!(encode(&clip, &three).unwrap(), encode(&clip, &three).unwrap());
    }

    #[test]
    fn every_layer_has_used_codewords() {
        let (data, _, _) = two_clusters(2);
        let books = train_codebooks(&data, 3, 8, 1, &EmaConfig::default()).unwrap();
        for layer in 0..3 {
            assert!(books.ema_counts[layer * 8..(layer + 1) * 8].iter().any(|&c| c > 0.0));
        }
    }
}
