use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::float::Float;
use super::ops::{
    add_into, add_position, attention, attention_bwd, dropout, dropout_bwd, ffn, ffn_bwd,
    layer_norm, layer_norm_bwd, linear, linear_bwd, segs_from_lens, AttnCache, FfnCache, LnCache, Seg,
};
use super::params::Params;
use crate::error::{Error, Result};
use crate::subword::{SubwordModel, BOS, EOS, PAD};

/// One encoded training pair. `src` ends with EOS; `tgt` has neither BOS
/// nor EOS (they are added when batching).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub factor: u32,
}

impl Example {
    pub fn encode(sw: &SubwordModel, src: &str, tgt: &str, factor: u32) -> Self {
        Example { src: sw.encode_with_eos(src), tgt: sw.encode(tgt), factor }
    }
}

/// Padded id matrices for a group of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredBatch {
    pub size: usize,
    pub src_width: usize,
    pub tgt_width: usize,
    /// `size × src_width`, PAD-filled.
    pub src_ids: Vec<u32>,
    pub src_lens: Vec<usize>,
    /// Target-language factor of each sentence, shared by all its tokens.
    pub src_factor: Vec<u32>,
    /// BOS + target, `size × tgt_width`.
    pub tgt_in: Vec<u32>,
    /// target + EOS, `size × tgt_width`.
    pub tgt_out: Vec<u32>,
    pub tgt_lens: Vec<usize>,
    /// Non-pad target positions (the loss denominator).
    pub word_count: usize,
}

impl FactoredBatch {
    pub fn new<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let ex: Vec<&Example> = examples.into_iter().collect();
        let size = ex.len();
        let src_width = ex.iter().map(|e| e.src.len()).max().unwrap_or(0);
        let tgt_width = ex.iter().map(|e| e.tgt.len() + 1).max().unwrap_or(0);
        let mut b = FactoredBatch {
            size,
            src_width,
            tgt_width,
            src_ids: vec![PAD; size * src_width],
            src_lens: Vec::with_capacity(size),
            src_factor: Vec::with_capacity(size),
            tgt_in: vec![PAD; size * tgt_width],
            tgt_out: vec![PAD; size * tgt_width],
            tgt_lens: Vec::with_capacity(size),
            word_count: 0,
        };
        for (i, e) in ex.iter().enumerate() {
            b.src_ids[i * src_width..i * src_width + e.src.len()].copy_from_slice(&e.src);
            b.src_lens.push(e.src.len());
            b.src_factor.push(e.factor);
            let row = i * tgt_width;
            b.tgt_in[row] = BOS;
            b.tgt_in[row + 1..row + 1 + e.tgt.len()].copy_from_slice(&e.tgt);
            b.tgt_out[row..row + e.tgt.len()].copy_from_slice(&e.tgt);
            b.tgt_out[row + e.tgt.len()] = EOS;
            b.tgt_lens.push(e.tgt.len() + 1);
            b.word_count += e.tgt.len() + 1;
        }
        b
    }

    pub fn src_mask(&self) -> Vec<bool> {
        mask(&self.src_lens, self.src_width)
    }

    pub fn tgt_mask(&self) -> Vec<bool> {
        mask(&self.tgt_lens, self.tgt_width)
    }

    fn packed(ids: &[u32], lens: &[usize], width: usize) -> Vec<u32> {
        lens.iter().enumerate().flat_map(|(i, &l)| ids[i * width..i * width + l].iter().copied()).collect()
    }
}

fn mask(lens: &[usize], width: usize) -> Vec<bool> {
    lens.iter().flat_map(|&l| (0..width).map(move |j| j < l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    /// Label-smoothed cross-entropy averaged over target tokens.
    pub loss: f64,
    /// Unsmoothed negative log-likelihood summed over target tokens.
    pub nll: f64,
    pub tokens: usize,
}

pub(crate) struct EncLayerCache<T> {
    ln1: LnCache<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    ffn: FfnCache<T>,
    drop2: Option<Vec<T>>,
}

struct DecLayerCache<T> {
    ln1: LnCache<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: LnCache<T>,
    ffn: FfnCache<T>,
    drop3: Option<Vec<T>>,
}

fn check_ids(ids: &[u32], limit: usize, what: &str) -> Result<()> {
    match ids.iter().find(|&&i| i as usize >= limit) {
        Some(i) => Err(Error::Range(format!("{what} id {i} outside vocabulary of {limit}"))),
        None => Ok(()),
    }
}

pub(crate) fn embed_source<T: Float>(p: &Params<T>, ids: &[u32], segs: &[Seg], factors: &[u32]) -> Vec<T> {
    let cfg = &p.cfg;
    let (d, f) = (cfg.d_model, cfg.factor_dim);
    let w = d - f;
    let scale = T::lit((d as f64).sqrt());
    let mut x = vec![T::zero(); ids.len() * d];
    for (s, &fac) in segs.iter().zip(factors) {
        for t in 0..s.len {
            let r = s.off + t;
            let row = &mut x[r * d..(r + 1) * d];
            let e = p.layout.src_emb + ids[r] as usize * w;
            for j in 0..w {
                row[j] = p.data[e + j] * scale;
            }
            let fe = p.layout.factor_emb + fac as usize * f;
            for j in 0..f {
                row[w + j] = p.data[fe + j] * scale;
            }
            add_position(row, t);
        }
    }
    x
}

pub(crate) fn embed_target_row<T: Float>(p: &Params<T>, id: u32, pos: usize, row: &mut [T]) {
    let d = p.cfg.d_model;
    let scale = T::lit((d as f64).sqrt());
    let e = p.layout.tgt_emb + id as usize * d;
    for j in 0..d {
        row[j] = p.data[e + j] * scale;
    }
    add_position(row, pos);
}

pub(crate) fn encoder<T: Float>(
    p: &Params<T>,
    mut x: Vec<T>,
    segs: &[Seg],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<T>, Vec<EncLayerCache<T>>, LnCache<T>) {
    let cfg = &p.cfg;
    let (d, h, ff, rate) = (cfg.d_model, cfg.heads, cfg.d_ff, cfg.dropout);
    let mut caches = Vec::with_capacity(cfg.enc_layers);
    for li in &p.layout.enc {
        let (n1, ln1) = layer_norm(&p.data, li.ln1, &x, d);
        let (mut a, attn) = attention(&p.data, li.attn, &n1, &n1, segs, segs, false, h, d);
        let drop1 = dropout(&mut a, rate, rng.as_deref_mut());
        add_into(&mut x, &a);
        let (n2, ln2) = layer_norm(&p.data, li.ln2, &x, d);
        let (mut f, fc) = ffn(&p.data, li.ffn, &n2, d, ff);
        let drop2 = dropout(&mut f, rate, rng.as_deref_mut());
        add_into(&mut x, &f);
        caches.push(EncLayerCache { ln1, attn, drop1, ln2, ffn: fc, drop2 });
    }
    let (out, lnc) = layer_norm(&p.data, p.layout.enc_norm, &x, d);
    (out, caches, lnc)
}

#[allow(clippy::too_many_arguments)]
fn decoder<T: Float>(
    p: &Params<T>,
    mut y: Vec<T>,
    tsegs: &[Seg],
    mem: &[T],
    ssegs: &[Seg],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<T>, Vec<DecLayerCache<T>>, LnCache<T>) {
    let cfg = &p.cfg;
    let (d, h, ff, rate) = (cfg.d_model, cfg.heads, cfg.d_ff, cfg.dropout);
    let mut caches = Vec::with_capacity(cfg.dec_layers);
    for li in &p.layout.dec {
        let (n1, ln1) = layer_norm(&p.data, li.ln1, &y, d);
        let (mut a, self_attn) = attention(&p.data, li.self_attn, &n1, &n1, tsegs, tsegs, true, h, d);
        let drop1 = dropout(&mut a, rate, rng.as_deref_mut());
        add_into(&mut y, &a);
        let (n2, ln2) = layer_norm(&p.data, li.ln2, &y, d);
        let (mut c, cross) = attention(&p.data, li.cross_attn, &n2, mem, tsegs, ssegs, false, h, d);
        let drop2 = dropout(&mut c, rate, rng.as_deref_mut());
        add_into(&mut y, &c);
        let (n3, ln3) = layer_norm(&p.data, li.ln3, &y, d);
        let (mut f, fc) = ffn(&p.data, li.ffn, &n3, d, ff);
        let drop3 = dropout(&mut f, rate, rng.as_deref_mut());
        add_into(&mut y, &f);
        caches.push(DecLayerCache { ln1, self_attn, drop1, ln2, cross, drop2, ln3, ffn: fc, drop3 });
    }
    let (out, lnc) = layer_norm(&p.data, p.layout.dec_norm, &y, d);
    (out, caches, lnc)
}

/// Loss over output rows; returns stats and (when asked) `d logits`.
fn output_loss<T: Float>(
    logits: &mut [T],
    gold: &[u32],
    vocab: usize,
    eps: f64,
    want_grad: bool,
) -> LossStats {
    let n = gold.len();
    let (mut loss, mut nll) = (0.0f64, 0.0f64);
    let inv_n = 1.0 / n as f64;
    for (r, &g) in gold.iter().enumerate() {
        let row = &mut logits[r * vocab..(r + 1) * vocab];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max).f64();
        let mut z = 0.0f64;
        let mut sum = 0.0f64;
        for &v in row.iter() {
            let v = v.f64();
            z += (v - m).exp();
            sum += v;
        }
        let lse = m + z.ln();
        let lp_gold = row[g as usize].f64() - lse;
        let lp_mean = sum / vocab as f64 - lse;
        loss += -((1.0 - eps) * lp_gold + eps * lp_mean);
        nll += -lp_gold;
        if want_grad {
            let u = eps / vocab as f64;
            for v in row.iter_mut() {
                *v = T::lit(((v.f64() - lse).exp() - u) * inv_n);
            }
            row[g as usize] -= T::lit((1.0 - eps) * inv_n);
        }
    }
    LossStats { loss: loss * inv_n, nll, tokens: n }
}

struct Prepared {
    src: Vec<u32>,
    ssegs: Vec<Seg>,
    tin: Vec<u32>,
    tout: Vec<u32>,
    tsegs: Vec<Seg>,
}

fn prepare<T: Float>(p: &Params<T>, b: &FactoredBatch) -> Result<Prepared> {
    let cfg = &p.cfg;
    if b.size == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let src = FactoredBatch::packed(&b.src_ids, &b.src_lens, b.src_width);
    let tin = FactoredBatch::packed(&b.tgt_in, &b.tgt_lens, b.tgt_width);
    let tout = FactoredBatch::packed(&b.tgt_out, &b.tgt_lens, b.tgt_width);
    check_ids(&src, cfg.token_vocab, "source token")?;
    check_ids(&tin, cfg.token_vocab, "target token")?;
    check_ids(&tout, cfg.token_vocab, "target token")?;
    check_ids(&b.src_factor, cfg.factor_vocab, "factor")?;
    let longest = b.src_lens.iter().chain(&b.tgt_lens).copied().max().unwrap_or(0);
    if longest > cfg.max_len + 1 {
        return Err(Error::Range(format!("sequence of {longest} tokens exceeds max_len {}", cfg.max_len)));
    }
    Ok(Prepared {
        ssegs: segs_from_lens(&b.src_lens),
        tsegs: segs_from_lens(&b.tgt_lens),
        src,
        tin,
        tout,
    })
}

fn embed_targets<T: Float>(p: &Params<T>, ids: &[u32], segs: &[Seg]) -> Vec<T> {
    let d = p.cfg.d_model;
    let mut y = vec![T::zero(); ids.len() * d];
    for s in segs {
        for t in 0..s.len {
            let r = s.off + t;
            embed_target_row(p, ids[r], t, &mut y[r * d..(r + 1) * d]);
        }
    }
    y
}

/// Loss of a batch without dropout.
pub fn batch_loss<T: Float>(p: &Params<T>, b: &FactoredBatch) -> Result<LossStats> {
    let pr = prepare(p, b)?;
    let cfg = &p.cfg;
    let x = embed_source(p, &pr.src, &pr.ssegs, &b.src_factor);
    let (mem, _, _) = encoder(p, x, &pr.ssegs, None);
    let y = embed_targets(p, &pr.tin, &pr.tsegs);
    let (hid, _, _) = decoder(p, y, &pr.tsegs, &mem, &pr.ssegs, None);
    let mut logits = linear(&p.data, p.layout.out_w, p.layout.out_b, &hid, cfg.d_model, cfg.token_vocab);
    Ok(output_loss(&mut logits, &pr.tout, cfg.token_vocab, cfg.label_smoothing, false))
}

/// Loss and gradient of a batch. Dropout is active when `dropout_seed` is
/// given (and the configured rate is nonzero).
pub fn loss_and_grad<T: Float>(
    p: &Params<T>,
    b: &FactoredBatch,
    dropout_seed: Option<u64>,
) -> Result<(LossStats, Vec<T>)> {
    let pr = prepare(p, b)?;
    let cfg = &p.cfg;
    let lay = &p.layout;
    let (d, v, h, ff, f) = (cfg.d_model, cfg.token_vocab, cfg.heads, cfg.d_ff, cfg.factor_dim);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);

    let mut x = embed_source(p, &pr.src, &pr.ssegs, &b.src_factor);
    let drop_src = dropout(&mut x, cfg.dropout, rng.as_mut());
    let (mem, enc_caches, enc_ln) = encoder(p, x, &pr.ssegs, rng.as_mut());
    let mut y = embed_targets(p, &pr.tin, &pr.tsegs);
    let drop_tgt = dropout(&mut y, cfg.dropout, rng.as_mut());
    let (hid, dec_caches, dec_ln) = decoder(p, y, &pr.tsegs, &mem, &pr.ssegs, rng.as_mut());
    let mut logits = linear(&p.data, lay.out_w, lay.out_b, &hid, d, v);
    let stats = output_loss(&mut logits, &pr.tout, v, cfg.label_smoothing, true);

    let mut g = vec![T::zero(); p.data.len()];
    let dhid = linear_bwd(&p.data, &mut g, lay.out_w, lay.out_b, &hid, &logits, d, v);
    drop(logits);

    // decoder
    let mut dy = layer_norm_bwd(&p.data, &mut g, lay.dec_norm, &dec_ln, &dhid, d);
    let mut dmem = vec![T::zero(); mem.len()];
    for (li, c) in lay.dec.iter().zip(&dec_caches).rev() {
        let mut df = dy.clone();
        dropout_bwd(&mut df, &c.drop3);
        let dn3 = ffn_bwd(&p.data, &mut g, li.ffn, &c.ffn, &df, d, ff);
        add_into(&mut dy, &layer_norm_bwd(&p.data, &mut g, li.ln3, &c.ln3, &dn3, d));

        let mut dc = dy.clone();
        dropout_bwd(&mut dc, &c.drop2);
        let (dn2, dm) = attention_bwd(&p.data, &mut g, li.cross_attn, &c.cross, &dc, &pr.tsegs, &pr.ssegs, h, d);
        add_into(&mut dmem, &dm);
        add_into(&mut dy, &layer_norm_bwd(&p.data, &mut g, li.ln2, &c.ln2, &dn2, d));

        let mut da = dy.clone();
        dropout_bwd(&mut da, &c.drop1);
        let (dq, dkv) = attention_bwd(&p.data, &mut g, li.self_attn, &c.self_attn, &da, &pr.tsegs, &pr.tsegs, h, d);
        let mut dn1 = dq;
        add_into(&mut dn1, &dkv);
        add_into(&mut dy, &layer_norm_bwd(&p.data, &mut g, li.ln1, &c.ln1, &dn1, d));
    }
    dropout_bwd(&mut dy, &drop_tgt);
    let scale = T::lit((d as f64).sqrt());
    for (r, &id) in pr.tin.iter().enumerate() {
        let e = lay.tgt_emb + id as usize * d;
        for j in 0..d {
            g[e + j] += dy[r * d + j] * scale;
        }
    }

    // encoder
    let mut dx = layer_norm_bwd(&p.data, &mut g, lay.enc_norm, &enc_ln, &dmem, d);
    for (li, c) in lay.enc.iter().zip(&enc_caches).rev() {
        let mut df = dx.clone();
        dropout_bwd(&mut df, &c.drop2);
        let dn2 = ffn_bwd(&p.data, &mut g, li.ffn, &c.ffn, &df, d, ff);
        add_into(&mut dx, &layer_norm_bwd(&p.data, &mut g, li.ln2, &c.ln2, &dn2, d));

        let mut da = dx.clone();
        dropout_bwd(&mut da, &c.drop1);
        let (dq, dkv) = attention_bwd(&p.data, &mut g, li.attn, &c.attn, &da, &pr.ssegs, &pr.ssegs, h, d);
        let mut dn1 = dq;
        add_into(&mut dn1, &dkv);
        add_into(&mut dx, &layer_norm_bwd(&p.data, &mut g, li.ln1, &c.ln1, &dn1, d));
    }
    dropout_bwd(&mut dx, &drop_src);
    let w = d - f;
    for (s, &fac) in pr.ssegs.iter().zip(&b.src_factor) {
        for r in s.off..s.off + s.len {
            let e = lay.src_emb + pr.src[r] as usize * w;
            for j in 0..w {
                g[e + j] += dx[r * d + j] * scale;
            }
            let fe = lay.factor_emb + fac as usize * f;
            for j in 0..f {
                g[fe + j] += dx[r * d + w + j] * scale;
            }
        }
    }
    Ok((stats, g))
}

/// Decoder self-attention weights of `layer`, one `heads × t × t` block per
/// sentence (eval mode). Exposed for mask checks.
pub fn decoder_self_attention<T: Float>(p: &Params<T>, b: &FactoredBatch, layer: usize) -> Result<Vec<Vec<T>>> {
    let pr = prepare(p, b)?;
    let x = embed_source(p, &pr.src, &pr.ssegs, &b.src_factor);
    let (mem, _, _) = encoder(p, x, &pr.ssegs, None);
    let y = embed_targets(p, &pr.tin, &pr.tsegs);
    let (_, caches, _) = decoder(p, y, &pr.tsegs, &mem, &pr.ssegs, None);
    let h = p.cfg.heads;
    Ok(pr
        .tsegs
        .iter()
        .enumerate()
        .map(|(i, s)| (0..h).flat_map(|hh| caches[layer].self_attn.weights(i, hh, s.len, s.len).to_vec()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmt::params::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            token_vocab: 40,
            factor_vocab: 3,
            factor_dim: 4,
            dropout: 0.0,
            label_smoothing: 0.1,
            max_len: 32,
        }
    }

    fn examples() -> Vec<Example> {
        vec![
            Example { src: vec![5, 6, 7, EOS], tgt: vec![8, 9], factor: 1 },
            Example { src: vec![10, EOS], tgt: vec![11, 12, 13, 14], factor: 2 },
            Example { src: vec![15, 16, 17, 18, 19, EOS], tgt: vec![20], factor: 0 },
        ]
    }

    #[test]
    fn batch_shapes() {
        let ex = examples();
        let b = FactoredBatch::new(&ex);
        assert_eq!((b.size, b.src_width, b.tgt_width), (3, 6, 5));
        assert_eq!(&b.tgt_in[0..5], &[BOS, 8, 9, PAD, PAD]);
        assert_eq!(&b.tgt_out[0..5], &[8, 9, EOS, PAD, PAD]);
        assert_eq!(b.word_count, 3 + 5 + 2);
        assert_eq!(b.src_mask().iter().filter(|&&m| m).count(), 12);
    }

    #[test]
    fn loss_is_deterministic_and_order_invariant() {
        let p = Params::<f64>::init(&cfg(), 3).unwrap();
        let ex = examples();
        let a = batch_loss(&p, &FactoredBatch::new(&ex)).unwrap();
        let b = batch_loss(&p, &FactoredBatch::new(&ex)).unwrap();
        assert_eq!(a, b);
        let rev: Vec<&Example> = ex.iter().rev().collect();
        let c = batch_loss(&p, &FactoredBatch::new(rev)).unwrap();
        assert!((a.loss - c.loss).abs() < 1e-12);
        let (s, _) = loss_and_grad(&p, &FactoredBatch::new(&ex), None).unwrap();
        assert!((s.loss - a.loss).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_ids() {
        let p = Params::<f64>::init(&cfg(), 3).unwrap();
        let bad = [Example { src: vec![99, EOS], tgt: vec![5], factor: 0 }];
        assert!(matches!(batch_loss(&p, &FactoredBatch::new(&bad)), Err(Error::Range(_))));
        let bad = [Example { src: vec![5, EOS], tgt: vec![5], factor: 7 }];
        assert!(matches!(batch_loss(&p, &FactoredBatch::new(&bad)), Err(Error::Range(_))));
    }

    #[test]
    fn future_positions_get_zero_attention() {
        let p = Params::<f64>::init(&cfg(), 3).unwrap();
        let ex = examples();
        let w = decoder_self_attention(&p, &FactoredBatch::new(&ex), 1).unwrap();
        for (blocks, e) in w.iter().zip(&ex) {
            let t = e.tgt.len() + 1;
            for h in 0..2 {
                for i in 0..t {
                    for j in 0..t {
                        let a = blocks[h * t * t + i * t + j];
                        if j > i {
                            assert_eq!(a, 0.0);
                        } else {
                            assert!(a > 0.0);
                        }
                    }
                }
            }
        }
    }
}
