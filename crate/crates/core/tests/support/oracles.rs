//! Brute-force references for the tokenizer and metrics.
//!
//! Each check returns how many cases disagreed with the library.

use dimo::metrics::{
    bleu, diversity, fid, lcs_len, mm_dist, multimodality, r_precision, rouge_l, soft_bertscore, CiderScorer,
};
use dimo::rng::Rng;
use dimo::rvq::{encode, MotionClip, RvqCodebooks};

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_rows(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
}

/// Greedy residual encoding vs a plain scan over every codeword of every layer.
pub fn rvq_exhaustive(cases: usize) -> usize {
    let mut rng = Rng::new(11);
    let mut bad = 0;
    for case in 0..cases {
        let size = 2 + rng.below(15);
        let channels = 1 + rng.below(4);
        let layers = 1 + rng.below(3);
        let dim = channels;
        // small integer grid so that ties actually happen
        let codewords: Vec<f32> = (0..layers * size * dim).map(|_| rng.below(5) as f32 - 2.0).collect();
        let books = RvqCodebooks::from_codewords(layers, size, dim, 1, codewords.clone()).unwrap();
        let frames = 1 + rng.below(6);
        let data: Vec<f32> = (0..frames * channels).map(|_| (rng.below(9) as f32 - 4.0) * 0.5).collect();
        let clip = MotionClip::new(channels, 20.0, data.clone()).unwrap();
        let grid = encode(&clip, &books).unwrap();
        for f in 0..frames {
            let mut residual: Vec<f64> = data[f * channels..(f + 1) * channels].iter().map(|&v| v as f64).collect();
            for l in 0..layers {
                let mut best = (f64::INFINITY, usize::MAX);
                for k in 0..size {
                    let off = (l * size + k) * dim;
                    let d: f64 = (0..dim).map(|j| (residual[j] - codewords[off + j] as f64).powi(2)).sum();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                if grid.get(f, l) as usize != best.1 {
                    bad += 1;
                    eprintln!("rvq case {case}: frame {f} layer {l} got {} want {}", grid.get(f, l), best.1);
                }
                let off = (l * size + best.1) * dim;
                for j in 0..dim {
                    residual[j] -= codewords[off + j] as f64;
                }
            }
        }
    }
    bad
}

fn count_ngram(tokens: &[u32], gram: &[u32]) -> usize {
    if tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len()).filter(|&i| &tokens[i..i + gram.len()] == gram).count()
}

fn distinct_ngrams(tokens: &[u32], n: usize) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            let g = tokens[i..i + n].to_vec();
            if !out.contains(&g) {
                out.push(g);
            }
        }
    }
    out
}

fn bleu_reference(cand: &[u32], refs: &[Vec<u32>], max_n: usize) -> f64 {
    let c = cand.len();
    if c == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=max_n {
        let total = c.saturating_sub(n - 1);
        if total == 0 {
            return 0.0;
        }
        let mut clipped = 0;
        for g in distinct_ngrams(cand, n) {
            let max_ref = refs.iter().map(|r| count_ngram(r, &g)).max().unwrap();
            clipped += count_ngram(cand, &g).min(max_ref);
        }
        if clipped == 0 {
            return 0.0;
        }
        log_p += (clipped as f64 / total as f64).ln();
    }
    let mut lens: Vec<usize> = refs.iter().map(Vec::len).collect();
    lens.sort_unstable();
    let mut r = lens[0];
    for &l in &lens {
        if (l as i64 - c as i64).abs() < (r as i64 - c as i64).abs() {
            r = l;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_p / max_n as f64).exp()
}

fn lcs_reference(a: &[u32], b: &[u32]) -> usize {
    // every subsequence of `a`, checked against `b`
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u32> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == x)) {
            best = sub.len();
        }
    }
    best
}

fn random_sentence(rng: &mut Rng, max_len: usize, alphabet: usize) -> Vec<u32> {
    (0..1 + rng.below(max_len)).map(|_| 4 + rng.below(alphabet) as u32).collect()
}

/// Hand cases plus random comparisons for BLEU, LCS and ROUGE-L.
pub fn text_hand_and_random(cases: usize) -> usize {
    let mut bad = 0;
    let (the, cat, is, on, mat) = (10, 11, 12, 13, 14);
    let cand = [the; 7];
    let reference = [the, cat, is, on, the, mat];
    if !close(bleu(&cand, &[&reference], 1), 2.0 / 7.0) {
        bad += 1;
    }
    if !close(bleu(&[the, cat], &[&reference], 1), (1.0f64 - 3.0).exp()) {
        bad += 1;
    }
    if bleu(&[cat, the], &[&reference], 2) != 0.0 {
        bad += 1;
    }
    if lcs_len(&[1, 2, 3, 4], &[1, 3, 4, 5]) != 3 || !close(rouge_l(&[1, 2, 3, 4], &[1, 3, 4, 5], 1.0), 0.75) {
        bad += 1;
    }
    let mut rng = Rng::new(5);
    for _ in 0..cases {
        let a = random_sentence(&mut rng, 10, 4);
        let refs: Vec<Vec<u32>> = (0..1 + rng.below(3)).map(|_| random_sentence(&mut rng, 10, 4)).collect();
        let ref_slices: Vec<&[u32]> = refs.iter().map(Vec::as_slice).collect();
        for n in 1..=4 {
            if !close(bleu(&a, &ref_slices, n), bleu_reference(&a, &refs, n)) {
                bad += 1;
            }
        }
        let l = lcs_reference(&a, &refs[0]);
        if lcs_len(&a, &refs[0]) != l {
            bad += 1;
        }
        let beta: f64 = 1.0 + rng.uniform();
        let (p, r) = (l as f64 / a.len() as f64, l as f64 / refs[0].len() as f64);
        let want = if l == 0 { 0.0 } else { (1.0 + beta * beta) * p * r / (r + beta * beta * p) };
        if !close(rouge_l(&a, &refs[0], beta), want) {
            bad += 1;
        }
    }
    bad
}

/// CIDEr from dense tf-idf vectors over an explicit n-gram list.
fn cider_reference(corpus: &[Vec<Vec<u32>>], cand: &[u32], refs: &[Vec<u32>], n_max: usize) -> f64 {
    let docs = corpus.len() as f64;
    let mut total = 0.0;
    for n in 1..=n_max {
        let mut grams: Vec<Vec<u32>> = distinct_ngrams(cand, n);
        for r in refs {
            for g in distinct_ngrams(r, n) {
                if !grams.contains(&g) {
                    grams.push(g);
                }
            }
        }
        let df = |g: &Vec<u32>| corpus.iter().filter(|set| set.iter().any(|s| count_ngram(s, g) > 0)).count();
        let vec_of = |s: &[u32]| -> Vec<f64> {
            let len = s.len().saturating_sub(n - 1).max(1) as f64;
            grams.iter().map(|g| count_ngram(s, g) as f64 / len * (docs / df(g).max(1) as f64).ln()).collect()
        };
        let c = vec_of(cand);
        let mut per = 0.0;
        for r in refs {
            let v = vec_of(r);
            let (nc, nv) = (c.iter().map(|x| x * x).sum::<f64>().sqrt(), v.iter().map(|x| x * x).sum::<f64>().sqrt());
            if nc > 0.0 && nv > 0.0 {
                per += (c.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / (nc * nv)).clamp(0.0, 1.0);
            }
        }
        total += per / refs.len() as f64;
    }
    total / n_max as f64
}

pub fn cider_random(cases: usize) -> usize {
    let mut rng = Rng::new(9);
    let mut bad = 0;
    for _ in 0..cases {
        let corpus: Vec<Vec<Vec<u32>>> = (0..2 + rng.below(5))
            .map(|_| (0..1 + rng.below(2)).map(|_| random_sentence(&mut rng, 7, 5)).collect())
            .collect();
        let scorer = CiderScorer::fit(&corpus, 4).unwrap();
        let refs = &corpus[rng.below(corpus.len())];
        let cand = random_sentence(&mut rng, 7, 6);
        if !close(scorer.score(&cand, refs).unwrap(), cider_reference(&corpus, &cand, refs, 4)) {
            bad += 1;
        }
    }
    bad
}

pub fn bertscore_random(cases: usize) -> usize {
    let mut rng = Rng::new(13);
    let table = random_rows(&mut rng, 12, 5);
    let emb = |t: u32| table[t as usize].clone();
    let mut bad = 0;
    for _ in 0..cases {
        let with_pad = |rng: &mut Rng| -> Vec<u32> { (0..1 + rng.below(8)).map(|_| rng.below(12) as u32).collect() };
        let c = with_pad(&mut rng);
        let r = with_pad(&mut rng);
        let cc: Vec<u32> = c.iter().copied().filter(|&t| t != 0).collect();
        let rr: Vec<u32> = r.iter().copied().filter(|&t| t != 0).collect();
        let want = if cc.is_empty() || rr.is_empty() {
            0.0
        } else {
            let cosine = |a: &[f64], b: &[f64]| {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
            };
            let mut s = 0.0;
            for &x in &cc {
                let mut best = f64::NEG_INFINITY;
                for &y in &rr {
                    best = best.max(cosine(&table[x as usize], &table[y as usize]));
                }
                s += best.clamp(0.0, 1.0);
            }
            s / cc.len() as f64
        };
        if !close(soft_bertscore(&c, &r, emb), want) {
            bad += 1;
        }
    }
    bad
}

fn mean_all_pairs(rows: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            if i < j {
                s += dist(&rows[i], &rows[j]);
                n += 1;
            }
        }
    }
    s / n as f64
}

/// Diversity, multimodality, MM-Dist and R-precision on ≤ 50 samples.
pub fn motion_metrics_random(cases: usize) -> usize {
    let mut rng = Rng::new(17);
    let mut bad = 0;
    for _ in 0..cases {
        let n = 2 + rng.below(49);
        let d = 1 + rng.below(6);
        let a = random_rows(&mut rng, n, d);
        let b = random_rows(&mut rng, n, d);
        if !close(diversity(&a, n, rng.next_u64()).unwrap(), mean_all_pairs(&a)) {
            bad += 1;
        }
        let groups: Vec<Vec<Vec<f64>>> = (0..1 + rng.below(5)).map(|_| random_rows(&mut rng, 4, d)).collect();
        let mm_want = groups.iter().map(|g| mean_all_pairs(g)).sum::<f64>() / groups.len() as f64;
        if !close(multimodality(&groups, 4, 1).unwrap(), mm_want) {
            bad += 1;
        }
        let dist_want = a.iter().zip(&b).map(|(x, y)| dist(x, y)).sum::<f64>() / n as f64;
        if !close(mm_dist(&a, &b).unwrap(), dist_want) {
            bad += 1;
        }
        let pool = 1 + rng.below(n);
        let max_r = 1 + rng.below(pool.min(3));
        let got = r_precision(&a, &b, pool, max_r).unwrap();
        let pools = n / pool;
        let mut hits = vec![0usize; max_r];
        for p in 0..pools {
            for i in p * pool..(p + 1) * pool {
                // rank the gallery, the true match first among equal distances
                let mut order: Vec<usize> = (p * pool..(p + 1) * pool).collect();
                order.sort_by(|&x, &y| {
                    dist(&a[i], &b[x]).total_cmp(&dist(&a[i], &b[y])).then((y == i).cmp(&(x == i)))
                });
                let rank = order.iter().position(|&j| j == i).unwrap();
                for (r, h) in hits.iter_mut().enumerate() {
                    if rank <= r {
                        *h += 1;
                    }
                }
            }
        }
        for (r, &h) in hits.iter().enumerate() {
            if !close(got[r], h as f64 / (pools * pool) as f64) {
                bad += 1;
            }
        }
    }
    bad
}

type Mat = Vec<Vec<f64>>;

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn inverse(m: &Mat) -> Mat {
    let n = m.len();
    let mut a: Mat = m.iter().enumerate().map(|(i, r)| {
        let mut row = r.clone();
        row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
        row
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= pivot);
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let pivot_row = a[c].clone();
                a[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Trace of the principal square root of `m` by Denman–Beavers iteration.
fn trace_sqrt(m: &Mat) -> f64 {
    let n = m.len();
    let mut y = m.clone();
    let mut z: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let ny: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let nz: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        y = ny;
        z = nz;
    }
    (0..n).map(|i| y[i][i]).sum()
}

fn stats(rows: &[Vec<f64>]) -> (Vec<f64>, Mat) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = (0..d)
        .map(|i| (0..d).map(|j| rows.iter().map(|r| (r[i] - mu[i]) * (r[j] - mu[j])).sum::<f64>() / n).collect())
        .collect();
    (mu, cov)
}

/// FID against `‖Δμ‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁Σ₂)^{1/2})` with a Denman–Beavers root.
pub fn fid_random(cases: usize) -> usize {
    let mut rng = Rng::new(23);
    let mut bad = 0;
    for _ in 0..cases {
        let d = 1 + rng.below(4);
        let n = d + 3 + rng.below(45);
        let mix: Mat = random_rows(&mut rng, d, d);
        let sample = |rng: &mut Rng, shift: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                    (0..d).map(|i| shift + (0..d).map(|k| mix[i][k] * z[k]).sum::<f64>()).collect()
                })
                .collect()
        };
        let a = sample(&mut rng, 0.0);
        let b = sample(&mut rng, 0.5);
        let (m1, c1) = stats(&a);
        let (m2, c2) = stats(&b);
        let mean_term: f64 = m1.iter().zip(&m2).map(|(x, y)| (x - y).powi(2)).sum();
        let traces: f64 = (0..d).map(|i| c1[i][i] + c2[i][i]).sum();
        let want = mean_term + traces - 2.0 * trace_sqrt(&matmul(&c1, &c2));
        let got = fid(&a, &b).unwrap();
        if (got - want).abs() > 1e-7 * (1.0 + want.abs()) {
            eprintln!("fid: got {got} want {want}");
            bad += 1;
        }
    }
    bad
}

/// Every brute-force family, as `(name, mismatches)`.
pub fn all() -> Vec<(&'static str, usize)> {
    vec![
        ("rvq encode vs exhaustive scan", rvq_exhaustive(200)),
        ("bleu/lcs/rouge hand and random cases", text_hand_and_random(200)),
        ("cider vs dense tf-idf", cider_random(200)),
        ("soft bertscore vs loops", bertscore_random(200)),
        ("diversity/multimodality/mm-dist/r-precision", motion_metrics_random(100)),
        ("fid vs denman-beavers", fid_random(100)),
    ]
}
