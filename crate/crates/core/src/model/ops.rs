//! Dense kernels with hand-written backward passes. Matrices are row-major.

use super::Real;

/// Dot product with eight independent accumulators (fixed summation order).
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += a · x`
#[inline]
pub fn axpy<F: Real>(a: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `x[n × din] · w[din × dout] + b`
pub fn linear<F: Real>(x: &[F], n: usize, din: usize, w: &[F], b: &[F], dout: usize) -> Vec<F> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    for i in 0..n {
        let row = &mut y[i * dout..(i + 1) * dout];
        for (kk, &a) in x[i * din..(i + 1) * din].iter().enumerate() {
            if a != F::zero() {
                axpy(a, &w[kk * dout..(kk + 1) * dout], row);
            }
        }
    }
    y
}

/// Accumulates `dw += xᵀ dy`, `db += Σ dy` and returns `dx = dy · wᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<F: Real>(
    x: &[F],
    n: usize,
    din: usize,
    w: &[F],
    dout: usize,
    dy: &[F],
    dw: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    let mut dx = vec![F::zero(); n * din];
    for i in 0..n {
        let dyi = &dy[i * dout..(i + 1) * dout];
        if dyi.iter().all(|v| *v == F::zero()) {
            continue;
        }
        axpy(F::one(), dyi, db);
        let xi = &x[i * din..(i + 1) * din];
        let dxi = &mut dx[i * din..(i + 1) * din];
        for kk in 0..din {
            let wrow = &w[kk * dout..(kk + 1) * dout];
            dxi[kk] = dot(dyi, wrow);
            let a = xi[kk];
            if a != F::zero() {
                axpy(a, dyi, &mut dw[kk * dout..(kk + 1) * dout]);
            }
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct LnCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

pub const LN_EPS: f64 = 1e-5;

pub fn layernorm<F: Real>(x: &[F], n: usize, d: usize, g: &[F], b: &[F]) -> (Vec<F>, LnCache<F>) {
    let mut y = vec![F::zero(); n * d];
    let mut xhat = vec![F::zero(); n * d];
    let mut rstd = vec![F::zero(); n];
    let inv_d = F::of(1.0 / d as f64);
    let eps = F::of(LN_EPS);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let r = F::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates `dg`, `db` and returns `dx`.
pub fn layernorm_backward<F: Real>(
    dy: &[F],
    cache: &LnCache<F>,
    n: usize,
    d: usize,
    g: &[F],
    dg: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    let mut dx = vec![F::zero(); n * d];
    let inv_d = F::of(1.0 / d as f64);
    let mut dxhat = vec![F::zero(); d];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dg[j] += dyi[j] * xh[j];
            db[j] += dyi[j];
            dxhat[j] = dyi[j] * g[j];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<F>() * inv_d;
        let mean_dxhat_xhat = dot(&dxhat, xh) * inv_d;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

pub fn gelu<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let k = F::of(0.044715);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let k = F::of(0.044715);
    let half = F::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * k * x * x)
}

/// In-place softmax of one row.
pub fn softmax_inplace<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Softmax of a logit row in f64.
pub fn softmax_f64<F: Real>(logits: &[F]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|v| (v.f64() - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `ln Σ exp(row)` in f64.
pub fn logsumexp_f64<F: Real>(row: &[F]) -> f64 {
    let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln()
}
