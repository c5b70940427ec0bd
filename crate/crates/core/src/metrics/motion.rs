use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DimoError, Result};
use crate::rng::Rng;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_rows(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = rows.first().map(Vec::len).ok_or_else(|| DimoError::EmptyInput(format!("no {what} features")))?;
    if rows.iter().any(|r| r.len() != d) {
        return Err(DimoError::Contract(format!("{what} features have mixed dimensions")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DimoError::Numeric(format!("non-finite {what} feature")));
    }
    Ok(d)
}

/// Mean vector and population covariance.
pub fn mean_cov(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = check_rows(rows, "sample")?;
    let n = rows.len() as f64;
    let mut mu = DVector::zeros(d);
    for r in rows {
        mu += DVector::from_column_slice(r);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let x = DVector::from_column_slice(r) - &mu;
        cov += &x * x.transpose();
    }
    cov /= n;
    Ok((mu, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians.
///
/// `Tr((Σ₁Σ₂)^{1/2})` is taken as `Tr((S Σ₂ S)^{1/2})` with `S = Σ₁^{1/2}`,
/// which has the same eigenvalues but is symmetric. Negative eigenvalues from
/// round-off are clamped to 0.
pub fn frechet_distance(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(DimoError::Contract("Gaussian statistics have mismatched shapes".into()));
    }
    let s = sym_sqrt(&(cov1 + cov1.transpose()).scale(0.5));
    let mut m = &s * cov2 * &s;
    m = (&m + m.transpose()).scale(0.5);
    let eig = SymmetricEigen::new(m);
    let mut tr_sqrt = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -1e-6 {
            warn!("clamping eigenvalue {v:e} in FID square root");
        }
        tr_sqrt += v.max(0.0).sqrt();
    }
    let diff = mu1 - mu2;
    let fid = diff.dot(&diff) + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
    if !fid.is_finite() {
        return Err(DimoError::Numeric("non-finite FID".into()));
    }
    Ok(fid.max(0.0))
}

/// FID between two feature sets (population statistics).
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    if real.len() < 2 || generated.len() < 2 {
        return Err(DimoError::InsufficientData { needed: 2, got: real.len().min(generated.len()) });
    }
    let (m1, c1) = mean_cov(real)?;
    let (m2, c2) = mean_cov(generated)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}

fn mean_pairwise(rows: &[&Vec<f64>]) -> f64 {
    let m = rows.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += euclidean(rows[i], rows[j]);
        }
    }
    2.0 * total / (m * (m - 1)) as f64
}

/// Mean pairwise distance over a seeded random subset of `m` samples.
pub fn diversity(features: &[Vec<f64>], m: usize, seed: u64) -> Result<f64> {
    if m < 2 {
        return Err(DimoError::Config("diversity subset size must be ≥ 2".into()));
    }
    if features.len() < m {
        return Err(DimoError::InsufficientData { needed: m, got: features.len() });
    }
    check_rows(features, "motion")?;
    let mut rng = Rng::new(seed);
    let pick: Vec<&Vec<f64>> = rng.sample_distinct(features.len(), m).into_iter().map(|i| &features[i]).collect();
    Ok(mean_pairwise(&pick))
}

/// Mean over conditions of the mean pairwise distance among `k` seeded
/// samples of that condition.
pub fn multimodality(per_condition: &[Vec<Vec<f64>>], k: usize, seed: u64) -> Result<f64> {
    if k < 2 {
        return Err(DimoError::Config("multimodality sample count must be ≥ 2".into()));
    }
    if per_condition.is_empty() {
        return Err(DimoError::EmptyInput("no conditions".into()));
    }
    let mut rng = Rng::new(seed);
    let mut total = 0.0;
    for samples in per_condition {
        if samples.len() < k {
            return Err(DimoError::InsufficientData { needed: k, got: samples.len() });
        }
        let pick: Vec<&Vec<f64>> = rng.sample_distinct(samples.len(), k).into_iter().map(|i| &samples[i]).collect();
        total += mean_pairwise(&pick);
    }
    Ok(total / per_condition.len() as f64)
}

/// Mean distance between paired text and motion features.
pub fn mm_dist(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<f64> {
    if text.len() != motion.len() {
        return Err(DimoError::Contract(format!("{} text vs {} motion features", text.len(), motion.len())));
    }
    if text.is_empty() {
        return Err(DimoError::EmptyInput("no pairs".into()));
    }
    Ok(text.iter().zip(motion).map(|(a, b)| euclidean(a, b)).sum::<f64>() / text.len() as f64)
}

/// R-precision at R = 1..=max_r.
///
/// Pairs are split into consecutive pools of `pool` (leftovers are dropped).
/// Within a pool, query `i` ranks every gallery item by distance; it scores
/// at R when fewer than R items are strictly closer than its own match.
pub fn r_precision(queries: &[Vec<f64>], gallery: &[Vec<f64>], pool: usize, max_r: usize) -> Result<Vec<f64>> {
    if queries.len() != gallery.len() {
        return Err(DimoError::Contract("queries and gallery must pair up".into()));
    }
    if pool == 0 || pool < max_r {
        return Err(DimoError::Config(format!("pool of {pool} cannot rank top-{max_r}")));
    }
    if queries.len() < pool {
        return Err(DimoError::InsufficientData { needed: pool, got: queries.len() });
    }
    let pools = queries.len() / pool;
    let mut hits = vec![0usize; max_r];
    for p in 0..pools {
        let range = p * pool..(p + 1) * pool;
        for i in range.clone() {
            let own = euclidean(&queries[i], &gallery[i]);
            let closer = range.clone().filter(|&j| j != i && euclidean(&queries[i], &gallery[j]) < own).count();
            for (r, h) in hits.iter_mut().enumerate() {
                if closer <= r {
                    *h += 1;
                }
            }
        }
    }
    let n = (pools * pool) as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_frechet() {
        let f = frechet_distance(
            &DVector::from_vec(vec![0.0]),
            &DMatrix::from_vec(1, 1, vec![1.0]),
            &DVector::from_vec(vec![2.0]),
            &DMatrix::from_vec(1, 1, vec![9.0]),
        )
        .unwrap();
        assert!((f - 8.0).abs() < 1e-12);
    }

    #[test]
    fn small_examples() {
        assert_eq!(diversity(&[vec![0.0, 0.0], vec![2.0, 0.0]], 2, 1).unwrap(), 2.0);
        assert_eq!(multimodality(&[vec![vec![0.0], vec![3.0]]], 2, 1).unwrap(), 3.0);
        assert_eq!(mm_dist(&[vec![0.0], vec![0.0]], &[vec![1.0], vec![3.0]]).unwrap(), 2.0);
        assert_eq!(r_precision(&[vec![1.0]], &[vec![5.0]], 1, 1).unwrap(), vec![1.0]);
        assert!(r_precision(&[vec![1.0]], &[vec![5.0]], 1, 2).is_err());
    }
}
