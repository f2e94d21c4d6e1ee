//! Layer primitives over packed (unpadded) token rows, with explicit
//! backward passes. Gradients accumulate into a flat buffer laid out like
//! the parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::float::{gemm, matmul, matmul_nt, matmul_tn, Float, MatMut, MatRef};
use super::params::{AttnIdx, FfnIdx, NormIdx};

const LN_EPS: f64 = 1e-6;

/// A run of consecutive rows belonging to one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seg {
    pub off: usize,
    pub len: usize,
}

pub fn segs_from_lens(lens: &[usize]) -> Vec<Seg> {
    let mut off = 0;
    lens.iter()
        .map(|&len| {
            let s = Seg { off, len };
            off += len;
            s
        })
        .collect()
}

pub struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub fn layer_norm<T: Float>(p: &[T], idx: NormIdx, x: &[T], d: usize) -> (Vec<T>, LnCache<T>) {
    let n = x.len() / d;
    let (g, b) = (&p[idx.g..idx.g + d], &p[idx.b..idx.b + d]);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let inv_d = T::one() / T::lit(d as f64);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_bwd<T: Float>(
    p: &[T],
    grads: &mut [T],
    idx: NormIdx,
    cache: &LnCache<T>,
    dy: &[T],
    d: usize,
) -> Vec<T> {
    let n = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = T::one() / T::lit(d as f64);
    for r in 0..n {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for j in 0..d {
            grads[idx.g + j] += dyr[j] * xh[j];
            grads[idx.b + j] += dyr[j];
            let dh = dyr[j] * p[idx.g + j];
            m1 += dh;
            m2 += dh * xh[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        let rs = cache.rstd[r];
        for j in 0..d {
            let dh = dyr[j] * p[idx.g + j];
            dx[r * d + j] = rs * (dh - m1 - xh[j] * m2);
        }
    }
    dx
}

/// `x (n×din) · W (din×dout) + b`.
pub fn linear<T: Float>(p: &[T], w: usize, b: usize, x: &[T], din: usize, dout: usize) -> Vec<T> {
    let n = x.len() / din;
    let mut y = vec![T::zero(); n * dout];
    for r in 0..n {
        y[r * dout..(r + 1) * dout].copy_from_slice(&p[b..b + dout]);
    }
    matmul(x, &p[w..w + din * dout], &mut y, n, din, dout, true);
    y
}

/// Accumulates weight/bias gradients and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_bwd<T: Float>(
    p: &[T],
    grads: &mut [T],
    w: usize,
    b: usize,
    x: &[T],
    dy: &[T],
    din: usize,
    dout: usize,
) -> Vec<T> {
    let n = x.len() / din;
    matmul_tn(x, dy, &mut grads[w..w + din * dout], din, n, dout, true);
    for r in 0..n {
        for j in 0..dout {
            grads[b + j] += dy[r * dout + j];
        }
    }
    let mut dx = vec![T::zero(); n * din];
    matmul_nt(dy, &p[w..w + din * dout], &mut dx, n, dout, din, false);
    dx
}

pub fn add_into<T: Float>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Inverted dropout; returns the scale mask applied (None when inactive).
pub fn dropout<T: Float>(x: &mut [T], rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= *m;
    }
    Some(mask)
}

pub fn dropout_bwd<T: Float>(dy: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, k) in dy.iter_mut().zip(m) {
            *v *= *k;
        }
    }
}

pub struct FfnCache<T> {
    x: Vec<T>,
    hidden: Vec<T>,
}

pub fn ffn<T: Float>(p: &[T], idx: FfnIdx, x: &[T], d: usize, ff: usize) -> (Vec<T>, FfnCache<T>) {
    let mut h = linear(p, idx.w1, idx.b1, x, d, ff);
    for v in &mut h {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let y = linear(p, idx.w2, idx.b2, &h, ff, d);
    (y, FfnCache { x: x.to_vec(), hidden: h })
}

pub fn ffn_bwd<T: Float>(
    p: &[T],
    grads: &mut [T],
    idx: FfnIdx,
    c: &FfnCache<T>,
    dy: &[T],
    d: usize,
    ff: usize,
) -> Vec<T> {
    let mut dh = linear_bwd(p, grads, idx.w2, idx.b2, &c.hidden, dy, ff, d);
    for (g, &h) in dh.iter_mut().zip(&c.hidden) {
        if h <= T::zero() {
            *g = T::zero();
        }
    }
    linear_bwd(p, grads, idx.w1, idx.b1, &c.x, &dh, d, ff)
}

pub struct AttnCache<T> {
    xq: Vec<T>,
    xkv: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    p_off: Vec<usize>,
    o: Vec<T>,
}

impl<T: Float> AttnCache<T> {
    /// Attention weights of sentence `seq`, head `head`, as a `tq × tk` block.
    pub fn weights(&self, seq: usize, head: usize, tq: usize, tk: usize) -> &[T] {
        let start = self.p_off[seq] + head * tq * tk;
        &self.probs[start..start + tq * tk]
    }
}

/// Row-wise softmax in place; `-inf` entries get exactly zero weight.
pub fn softmax_rows<T: Float>(s: &mut [T], cols: usize) {
    for row in s.chunks_mut(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        let inv = T::one() / z;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Multi-head attention where query sentence `i` attends to key sentence
/// `i` only (no cross-sentence leakage, no padding to mask).
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Float>(
    p: &[T],
    idx: AttnIdx,
    xq: &[T],
    xkv: &[T],
    qsegs: &[Seg],
    ksegs: &[Seg],
    causal: bool,
    heads: usize,
    d: usize,
) -> (Vec<T>, AttnCache<T>) {
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let q = linear(p, idx.wq, idx.bq, xq, d, d);
    let k = linear(p, idx.wk, idx.bk, xkv, d, d);
    let v = linear(p, idx.wv, idx.bv, xkv, d, d);
    let mut p_off = Vec::with_capacity(qsegs.len());
    let mut total = 0;
    for (qs, ks) in qsegs.iter().zip(ksegs) {
        p_off.push(total);
        total += heads * qs.len * ks.len;
    }
    let mut probs = vec![T::zero(); total];
    let mut o = vec![T::zero(); q.len()];
    for (b, (qs, ks)) in qsegs.iter().zip(ksegs).enumerate() {
        let (tq, tk) = (qs.len, ks.len);
        if tq == 0 || tk == 0 {
            continue;
        }
        for h in 0..heads {
            let sp = &mut probs[p_off[b] + h * tq * tk..p_off[b] + (h + 1) * tq * tk];
            let qv = MatRef::strided(&q[qs.off * d + h * dh..], tq, dh, d, 1);
            let kt = MatRef::strided(&k[ks.off * d + h * dh..], tk, dh, d, 1).t();
            gemm(scale, qv, kt, T::zero(), MatMut::new(sp, tq, tk));
            if causal {
                for i in 0..tq {
                    for j in i + 1..tk {
                        sp[i * tk + j] = T::neg_infinity();
                    }
                }
            }
            softmax_rows(sp, tk);
            let vv = MatRef::strided(&v[ks.off * d + h * dh..], tk, dh, d, 1);
            let ov = MatMut::strided(&mut o[qs.off * d + h * dh..], tq, dh, d, 1);
            gemm(T::one(), MatRef::new(sp, tq, tk), vv, T::zero(), ov);
        }
    }
    let out = linear(p, idx.wo, idx.bo, &o, d, d);
    let cache = AttnCache { xq: xq.to_vec(), xkv: xkv.to_vec(), q, k, v, probs, p_off, o };
    (out, cache)
}

/// Returns `(d xq, d xkv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_bwd<T: Float>(
    p: &[T],
    grads: &mut [T],
    idx: AttnIdx,
    c: &AttnCache<T>,
    dout: &[T],
    qsegs: &[Seg],
    ksegs: &[Seg],
    heads: usize,
    d: usize,
) -> (Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let d_o = linear_bwd(p, grads, idx.wo, idx.bo, &c.o, dout, d, d);
    let mut dq = vec![T::zero(); c.q.len()];
    let mut dk = vec![T::zero(); c.k.len()];
    let mut dv = vec![T::zero(); c.v.len()];
    let mut dp: Vec<T> = Vec::new();
    for (b, (qs, ks)) in qsegs.iter().zip(ksegs).enumerate() {
        let (tq, tk) = (qs.len, ks.len);
        if tq == 0 || tk == 0 {
            continue;
        }
        dp.resize(tq * tk, T::zero());
        for h in 0..heads {
            let pr = &c.probs[c.p_off[b] + h * tq * tk..c.p_off[b] + (h + 1) * tq * tk];
            let dov = MatRef::strided(&d_o[qs.off * d + h * dh..], tq, dh, d, 1);
            // dP = dO · Vᵀ
            let vt = MatRef::strided(&c.v[ks.off * d + h * dh..], tk, dh, d, 1).t();
            gemm(T::one(), dov, vt, T::zero(), MatMut::new(&mut dp, tq, tk));
            // dV = Pᵀ · dO
            let pt = MatRef::new(pr, tq, tk).t();
            gemm(T::one(), pt, dov, T::zero(), MatMut::strided(&mut dv[ks.off * d + h * dh..], tk, dh, d, 1));
            // softmax backward, folded with the score scale
            for i in 0..tq {
                let row = &pr[i * tk..(i + 1) * tk];
                let drow = &mut dp[i * tk..(i + 1) * tk];
                let dot: T = row.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..tk {
                    drow[j] = row[j] * (drow[j] - dot) * scale;
                }
            }
            let ds = MatRef::new(&dp, tq, tk);
            let kv = MatRef::strided(&c.k[ks.off * d + h * dh..], tk, dh, d, 1);
            gemm(T::one(), ds, kv, T::zero(), MatMut::strided(&mut dq[qs.off * d + h * dh..], tq, dh, d, 1));
            let qv = MatRef::strided(&c.q[qs.off * d + h * dh..], tq, dh, d, 1);
            gemm(T::one(), ds.t(), qv, T::zero(), MatMut::strided(&mut dk[ks.off * d + h * dh..], tk, dh, d, 1));
        }
    }
    let dxq = linear_bwd(p, grads, idx.wq, idx.bq, &c.xq, &dq, d, d);
    let mut dxkv = linear_bwd(p, grads, idx.wk, idx.bk, &c.xkv, &dk, d, d);
    let dxv = linear_bwd(p, grads, idx.wv, idx.bv, &c.xkv, &dv, d, d);
    add_into(&mut dxkv, &dxv);
    (dxq, dxkv)
}

/// Adds the sinusoidal encoding of `pos` to one row.
pub fn add_position<T: Float>(row: &mut [T], pos: usize) {
    let d = row.len();
    for i in (0..d).step_by(2) {
        let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
        row[i] += T::lit(angle.sin());
        if i + 1 < d {
            row[i + 1] += T::lit(angle.cos());
        }
    }
}
