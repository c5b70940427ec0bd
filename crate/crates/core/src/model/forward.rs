use super::ops::{
    axpy, dot, gelu, gelu_grad, layernorm, layernorm_backward, linear, linear_backward, softmax_inplace, LnCache,
};
use super::{BlockIds, DenoiserParams, Real};
use crate::corpus::SEP;
use crate::error::{DimoError, Result};

/// Output logits of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<F> {
    /// `max_text × vocab`
    pub text: Vec<F>,
    /// `motion_len × levels × codebook`
    pub motion: Vec<F>,
    pub max_text: usize,
    pub vocab: usize,
    pub motion_len: usize,
    pub levels: usize,
    pub codebook: usize,
}

impl<F: Real> Logits<F> {
    pub fn text_row(&self, i: usize) -> &[F] {
        &self.text[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn text_row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.text[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn motion_row(&self, t: usize, level: usize) -> &[F] {
        let o = (t * self.levels + level) * self.codebook;
        &self.motion[o..o + self.codebook]
    }

    pub fn motion_row_mut(&mut self, t: usize, level: usize) -> &mut [F] {
        let o = (t * self.levels + level) * self.codebook;
        &mut self.motion[o..o + self.codebook]
    }

    pub fn zeros_like(&self) -> Self {
        Logits {
            text: vec![F::zero(); self.text.len()],
            motion: vec![F::zero(); self.motion.len()],
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    ln1: LnCache<F>,
    h1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    attn: Vec<F>,
    ln2: LnCache<F>,
    h2: Vec<F>,
    a: Vec<F>,
    g: Vec<F>,
}

/// Activations kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    text: Vec<u32>,
    motion: Vec<u32>,
    motion_len: usize,
    level_caches: Vec<Vec<BlockCache<F>>>,
    level_out: Vec<Vec<F>>,
    alpha: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    lnf: LnCache<F>,
    hf: Vec<F>,
}

struct Dims {
    d: usize,
    heads: usize,
    ffn: usize,
}

fn head_slice<F: Real>(x: &[F], n: usize, d: usize, h: usize, dh: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(n * dh);
    for i in 0..n {
        out.extend_from_slice(&x[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}

fn attention<F: Real>(q: &[F], k: &[F], v: &[F], n: usize, dm: &Dims) -> (Vec<F>, Vec<F>) {
    let (d, heads) = (dm.d, dm.heads);
    let dh = d / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let mut out = vec![F::zero(); n * d];
    let mut probs = vec![F::zero(); heads * n * n];
    for h in 0..heads {
        let qh = head_slice(q, n, d, h, dh);
        let kh = head_slice(k, n, d, h, dh);
        let vh = head_slice(v, n, d, h, dh);
        for i in 0..n {
            let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            let qi = &qh[i * dh..(i + 1) * dh];
            for j in 0..n {
                row[j] = dot(qi, &kh[j * dh..(j + 1) * dh]) * scale;
            }
            softmax_inplace(row);
            let o = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for j in 0..n {
                axpy(row[j], &vh[j * dh..(j + 1) * dh], o);
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<F: Real>(
    dout: &[F],
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    n: usize,
    dm: &Dims,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (d, heads) = (dm.d, dm.heads);
    let dh = d / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let mut dq = vec![F::zero(); n * d];
    let mut dk = vec![F::zero(); n * d];
    let mut dv = vec![F::zero(); n * d];
    let mut dp = vec![F::zero(); n];
    for h in 0..heads {
        let qh = head_slice(q, n, d, h, dh);
        let kh = head_slice(k, n, d, h, dh);
        let vh = head_slice(v, n, d, h, dh);
        let doh = head_slice(dout, n, d, h, dh);
        let mut dqh = vec![F::zero(); n * dh];
        let mut dkh = vec![F::zero(); n * dh];
        let mut dvh = vec![F::zero(); n * dh];
        for i in 0..n {
            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
            let doi = &doh[i * dh..(i + 1) * dh];
            for j in 0..n {
                dp[j] = dot(doi, &vh[j * dh..(j + 1) * dh]);
                axpy(p[j], doi, &mut dvh[j * dh..(j + 1) * dh]);
            }
            let s = dot(p, &dp);
            let qi = &qh[i * dh..(i + 1) * dh];
            for j in 0..n {
                let ds = p[j] * (dp[j] - s) * scale;
                if ds == F::zero() {
                    continue;
                }
                axpy(ds, &kh[j * dh..(j + 1) * dh], &mut dqh[i * dh..(i + 1) * dh]);
                axpy(ds, qi, &mut dkh[j * dh..(j + 1) * dh]);
            }
        }
        for i in 0..n {
            let r = i * d + h * dh..i * d + (h + 1) * dh;
            dq[r.clone()].copy_from_slice(&dqh[i * dh..(i + 1) * dh]);
            dk[r.clone()].copy_from_slice(&dkh[i * dh..(i + 1) * dh]);
            dv[r].copy_from_slice(&dvh[i * dh..(i + 1) * dh]);
        }
    }
    (dq, dk, dv)
}

fn block_forward<F: Real>(p: &DenoiserParams<F>, b: &BlockIds, x: &mut [F], n: usize, dm: &Dims) -> BlockCache<F> {
    let d = dm.d;
    let (h1, ln1) = layernorm(x, n, d, p.t(b.ln1_g), p.t(b.ln1_b));
    let q = linear(&h1, n, d, p.t(b.wq), p.t(b.bq), d);
    let k = linear(&h1, n, d, p.t(b.wk), p.t(b.bk), d);
    let v = linear(&h1, n, d, p.t(b.wv), p.t(b.bv), d);
    let (attn, probs) = attention(&q, &k, &v, n, dm);
    let o = linear(&attn, n, d, p.t(b.wo), p.t(b.bo), d);
    axpy(F::one(), &o, x);
    let (h2, ln2) = layernorm(x, n, d, p.t(b.ln2_g), p.t(b.ln2_b));
    let a = linear(&h2, n, d, p.t(b.w1), p.t(b.b1), dm.ffn);
    let g: Vec<F> = a.iter().map(|&v| gelu(v)).collect();
    let y = linear(&g, n, dm.ffn, p.t(b.w2), p.t(b.b2), d);
    axpy(F::one(), &y, x);
    BlockCache { ln1, h1, q, k, v, probs, attn, ln2, h2, a, g }
}

/// Takes the gradient w.r.t. the block output and returns the gradient w.r.t. its input.
fn block_backward<F: Real>(
    p: &DenoiserParams<F>,
    b: &BlockIds,
    c: &BlockCache<F>,
    dx: Vec<F>,
    n: usize,
    dm: &Dims,
    grads: &mut DenoiserParams<F>,
) -> Vec<F> {
    let (d, ffn) = (dm.d, dm.ffn);
    let mut dx = dx;
    // feed-forward branch
    let (dw2, db2) = two_mut(grads, b.w2, b.b2);
    let mut dg = linear_backward(&c.g, n, ffn, p.t(b.w2), d, &dx, dw2, db2);
    for (dgi, &ai) in dg.iter_mut().zip(&c.a) {
        *dgi *= gelu_grad(ai);
    }
    let (dw1, db1) = two_mut(grads, b.w1, b.b1);
    let dh2 = linear_backward(&c.h2, n, d, p.t(b.w1), ffn, &dg, dw1, db1);
    let (dg2, dbeta2) = two_mut(grads, b.ln2_g, b.ln2_b);
    let dmid = layernorm_backward(&dh2, &c.ln2, n, d, p.t(b.ln2_g), dg2, dbeta2);
    axpy(F::one(), &dmid, &mut dx);
    // attention branch
    let (dwo, dbo) = two_mut(grads, b.wo, b.bo);
    let dattn = linear_backward(&c.attn, n, d, p.t(b.wo), d, &dx, dwo, dbo);
    let (dq, dk, dv) = attention_backward(&dattn, &c.q, &c.k, &c.v, &c.probs, n, dm);
    let (dwq, dbq) = two_mut(grads, b.wq, b.bq);
    let mut dh1 = linear_backward(&c.h1, n, d, p.t(b.wq), d, &dq, dwq, dbq);
    let (dwk, dbk) = two_mut(grads, b.wk, b.bk);
    axpy(F::one(), &linear_backward(&c.h1, n, d, p.t(b.wk), d, &dk, dwk, dbk), &mut dh1);
    let (dwv, dbv) = two_mut(grads, b.wv, b.bv);
    axpy(F::one(), &linear_backward(&c.h1, n, d, p.t(b.wv), d, &dv, dwv, dbv), &mut dh1);
    let (dg1, dbeta1) = two_mut(grads, b.ln1_g, b.ln1_b);
    let din = layernorm_backward(&dh1, &c.ln1, n, d, p.t(b.ln1_g), dg1, dbeta1);
    axpy(F::one(), &din, &mut dx);
    dx
}

/// Disjoint mutable borrows of two gradient tensors (`i < j`).
fn two_mut<F>(g: &mut DenoiserParams<F>, i: usize, j: usize) -> (&mut [F], &mut [F]) {
    debug_assert!(i < j);
    let (lo, hi) = g.tensors.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

fn check_inputs<F: Real>(p: &DenoiserParams<F>, text: &[u32], motion: &[u32]) -> Result<usize> {
    let c = &p.config;
    if text.len() != c.max_text {
        return Err(DimoError::Contract(format!("text length {} != {}", text.len(), c.max_text)));
    }
    if motion.len() % c.levels != 0 {
        return Err(DimoError::Contract("motion tokens are not a whole number of timesteps".into()));
    }
    let t = motion.len() / c.levels;
    if t > c.max_motion {
        return Err(DimoError::Contract(format!("{t} motion timesteps exceed max {}", c.max_motion)));
    }
    if let Some(&bad) = text.iter().find(|&&id| id as usize >= c.text_vocab) {
        return Err(DimoError::CorruptInput(format!("text id {bad} out of range")));
    }
    if let Some(&bad) = motion.iter().find(|&&id| id > c.mask_code()) {
        return Err(DimoError::CorruptInput(format!("motion id {bad} out of range")));
    }
    Ok(t)
}

/// Forward pass keeping activations for [`backward`].
///
/// `text` has `max_text` ids; `motion` is `T × levels`, timestep-major, with the
/// mask code `codebook` marking masked cells.
pub fn forward_cached<F: Real>(
    p: &DenoiserParams<F>,
    text: &[u32],
    motion: &[u32],
) -> Result<(Logits<F>, ForwardCache<F>)> {
    let tlen = check_inputs(p, text, motion)?;
    let c = &p.config;
    let lay = &p.layout;
    let dm = Dims { d: c.d_model, heads: c.heads, ffn: c.ffn };
    let d = dm.d;
    let n = c.seq_len(tlen);
    let r = c.levels;
    let mut x = vec![F::zero(); n * d];
    let pos = p.t(lay.pos);
    let temb = p.t(lay.text_emb);
    for (i, &tok) in text.iter().chain(std::iter::once(&SEP)).enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        row.copy_from_slice(&temb[tok as usize * d..(tok as usize + 1) * d]);
        axpy(F::one(), &pos[i * d..(i + 1) * d], row);
    }
    // per-level embeddings, optional per-level encoders, softmax fusion
    let fw = p.t(lay.fusion);
    let mut alpha: Vec<F> = fw.to_vec();
    softmax_inplace(&mut alpha);
    let mut level_caches = Vec::with_capacity(r);
    let mut level_out = Vec::with_capacity(r);
    for l in 0..r {
        let table = p.t(lay.motion_emb[l]);
        let mut e = vec![F::zero(); tlen * d];
        for t in 0..tlen {
            let id = motion[t * r + l] as usize;
            e[t * d..(t + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
        }
        let caches: Vec<_> = lay.level_blocks[l]
            .iter()
            .map(|b| block_forward(p, b, &mut e, tlen, &dm))
            .collect();
        level_caches.push(caches);
        level_out.push(e);
    }
    let base = c.max_text + 1;
    for t in 0..tlen {
        let row = &mut x[(base + t) * d..(base + t + 1) * d];
        row.copy_from_slice(&pos[(base + t) * d..(base + t + 1) * d]);
        for l in 0..r {
            axpy(alpha[l], &level_out[l][t * d..(t + 1) * d], row);
        }
    }
    let blocks: Vec<_> = lay.blocks.iter().map(|b| block_forward(p, b, &mut x, n, &dm)).collect();
    let (hf, lnf) = layernorm(&x, n, d, p.t(lay.lnf_g), p.t(lay.lnf_b));
    let text_logits = linear(&hf[..c.max_text * d], c.max_text, d, p.t(lay.text_w), p.t(lay.text_b), c.text_vocab);
    let mut motion_logits = vec![F::zero(); tlen * r * c.codebook];
    let hm = &hf[base * d..];
    for l in 0..r {
        let lg = linear(hm, tlen, d, p.t(lay.motion_w[l]), p.t(lay.motion_b[l]), c.codebook);
        for t in 0..tlen {
            let o = (t * r + l) * c.codebook;
            motion_logits[o..o + c.codebook].copy_from_slice(&lg[t * c.codebook..(t + 1) * c.codebook]);
        }
    }
    let logits = Logits {
        text: text_logits,
        motion: motion_logits,
        max_text: c.max_text,
        vocab: c.text_vocab,
        motion_len: tlen,
        levels: r,
        codebook: c.codebook,
    };
    let cache = ForwardCache {
        text: text.to_vec(),
        motion: motion.to_vec(),
        motion_len: tlen,
        level_caches,
        level_out,
        alpha,
        blocks,
        lnf,
        hf,
    };
    Ok((logits, cache))
}

/// Inference forward pass.
pub fn forward<F: Real>(p: &DenoiserParams<F>, text: &[u32], motion: &[u32]) -> Result<Logits<F>> {
    forward_cached(p, text, motion).map(|(l, _)| l)
}

/// Accumulates into `grads` the gradient of `Σ dlogits ⊙ logits` w.r.t. the parameters.
pub fn backward<F: Real>(
    p: &DenoiserParams<F>,
    cache: &ForwardCache<F>,
    dlogits: &Logits<F>,
    grads: &mut DenoiserParams<F>,
) {
    let c = &p.config;
    let lay = &p.layout;
    let dm = Dims { d: c.d_model, heads: c.heads, ffn: c.ffn };
    let d = dm.d;
    let tlen = cache.motion_len;
    let n = c.seq_len(tlen);
    let r = c.levels;
    let base = c.max_text + 1;

    let mut dhf = vec![F::zero(); n * d];
    {
        let (dw, db) = two_mut(grads, lay.text_w, lay.text_b);
        let dh = linear_backward(&cache.hf[..c.max_text * d], c.max_text, d, p.t(lay.text_w), c.text_vocab, &dlogits.text, dw, db);
        dhf[..c.max_text * d].copy_from_slice(&dh);
    }
    let hm = &cache.hf[base * d..];
    let mut dl = vec![F::zero(); tlen * c.codebook];
    for l in 0..r {
        for t in 0..tlen {
            dl[t * c.codebook..(t + 1) * c.codebook].copy_from_slice(dlogits.motion_row(t, l));
        }
        let (dw, db) = two_mut(grads, lay.motion_w[l], lay.motion_b[l]);
        let dh = linear_backward(hm, tlen, d, p.t(lay.motion_w[l]), c.codebook, &dl, dw, db);
        axpy(F::one(), &dh, &mut dhf[base * d..]);
    }
    let (dg, db) = two_mut(grads, lay.lnf_g, lay.lnf_b);
    let mut dx = layernorm_backward(&dhf, &cache.lnf, n, d, p.t(lay.lnf_g), dg, db);
    for (b, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
        dx = block_backward(p, b, bc, dx, n, &dm, grads);
    }

    // embeddings
    for i in 0..n {
        axpy(F::one(), &dx[i * d..(i + 1) * d], &mut grads.tm(lay.pos)[i * d..(i + 1) * d]);
    }
    {
        let g = grads.tm(lay.text_emb);
        for (i, &tok) in cache.text.iter().chain(std::iter::once(&SEP)).enumerate() {
            let tok = tok as usize;
            axpy(F::one(), &dx[i * d..(i + 1) * d], &mut g[tok * d..(tok + 1) * d]);
        }
    }
    let dmot = &dx[base * d..];
    let mut dalpha = vec![F::zero(); r];
    for l in 0..r {
        let e = &cache.level_out[l];
        dalpha[l] = dot(dmot, e);
        let mut de: Vec<F> = dmot.iter().map(|&v| v * cache.alpha[l]).collect();
        for (b, bc) in lay.level_blocks[l].iter().zip(&cache.level_caches[l]).rev() {
            de = block_backward(p, b, bc, de, tlen, &dm, grads);
        }
        let g = grads.tm(lay.motion_emb[l]);
        for t in 0..tlen {
            let id = cache.motion[t * r + l] as usize;
            axpy(F::one(), &de[t * d..(t + 1) * d], &mut g[id * d..(id + 1) * d]);
        }
    }
    // softmax Jacobian for the fusion logits
    let s = dot(&cache.alpha, &dalpha);
    let gf = grads.tm(lay.fusion);
    for l in 0..r {
        gf[l] += cache.alpha[l] * (dalpha[l] - s);
    }
}
