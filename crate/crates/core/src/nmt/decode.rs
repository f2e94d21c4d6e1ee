use serde::{Deserialize, Serialize};

use super::float::Float;
use super::model::{embed_source, embed_target_row, encoder};
use super::ops::{add_into, ffn, layer_norm, linear, segs_from_lens, softmax_rows};
use super::params::Params;
use crate::corpus::LangId;
use crate::error::{Error, Result};
use crate::subword::{SubwordModel, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeSettings {
    pub mode: DecodeMode,
    pub beam_size: usize,
    /// Exponent of the length normalization applied to finished beams.
    pub length_alpha: f64,
    /// Output length cap in tokens; `None` uses `2 × source + 10`, bounded by
    /// the model's `max_len`.
    pub max_len: Option<usize>,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings { mode: DecodeMode::Greedy, beam_size: 5, length_alpha: 1.0, max_len: None }
    }
}

impl DecodeSettings {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn beam(size: usize) -> Self {
        DecodeSettings { mode: DecodeMode::Beam, beam_size: size, ..Self::default() }
    }

    fn cap(&self, src_len: usize, model_max: usize) -> usize {
        self.max_len.unwrap_or(2 * src_len + 10).min(model_max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub text: String,
    pub ids: Vec<u32>,
    /// The length cap was hit before EOS.
    pub truncated: bool,
}

/// Encoder output of one sentence with cross-attention keys/values per layer.
struct Memory<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

#[derive(Clone)]
struct Hyp<T> {
    mem: usize,
    tokens: Vec<u32>,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    score: f64,
}

fn encode_sources<T: Float>(p: &Params<T>, srcs: &[Vec<u32>], factors: &[u32]) -> Vec<Memory<T>> {
    let d = p.cfg.d_model;
    let lens: Vec<usize> = srcs.iter().map(Vec::len).collect();
    let segs = segs_from_lens(&lens);
    let ids: Vec<u32> = srcs.concat();
    let x = embed_source(p, &ids, &segs, factors);
    let (mem, _, _) = encoder(p, x, &segs, None);
    let per_layer: Vec<(Vec<T>, Vec<T>)> = p
        .layout
        .dec
        .iter()
        .map(|li| {
            let a = li.cross_attn;
            (linear(&p.data, a.wk, a.bk, &mem, d, d), linear(&p.data, a.wv, a.bv, &mem, d, d))
        })
        .collect();
    segs.iter()
        .map(|s| Memory {
            k: per_layer.iter().map(|(k, _)| k[s.off * d..(s.off + s.len) * d].to_vec()).collect(),
            v: per_layer.iter().map(|(_, v)| v[s.off * d..(s.off + s.len) * d].to_vec()).collect(),
            len: s.len,
        })
        .collect()
}

/// Single-query attention of `q` (one row) over `len` cached key/value rows.
fn attend_row<T: Float>(q: &[T], k: &[T], v: &[T], len: usize, heads: usize, out: &mut [T], scratch: &mut Vec<T>) {
    let d = q.len();
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    scratch.resize(len, T::zero());
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, s) in scratch.iter_mut().enumerate() {
            let kh = &k[j * d + h * dh..j * d + (h + 1) * dh];
            *s = qh.iter().zip(kh).map(|(&a, &b)| a * b).sum::<T>() * scale;
        }
        softmax_rows(scratch, len);
        let oh = &mut out[h * dh..(h + 1) * dh];
        oh.iter_mut().for_each(|x| *x = T::zero());
        for (j, &w) in scratch.iter().enumerate() {
            let vh = &v[j * d + h * dh..j * d + (h + 1) * dh];
            for (o, &x) in oh.iter_mut().zip(vh) {
                *o += w * x;
            }
        }
    }
}

/// One decoder step for every hypothesis: consumes each hypothesis's last
/// token (BOS when empty), extends its self-attention cache, and returns
/// log-probabilities `rows × vocab`.
fn step<T: Float>(p: &Params<T>, mems: &[Memory<T>], hyps: &mut [Hyp<T>]) -> Vec<f64> {
    let cfg = &p.cfg;
    let (d, heads, ff, vocab) = (cfg.d_model, cfg.heads, cfg.d_ff, cfg.token_vocab);
    let n = hyps.len();
    let mut x = vec![T::zero(); n * d];
    for (r, h) in hyps.iter().enumerate() {
        let last = h.tokens.last().copied().unwrap_or(crate::subword::BOS);
        embed_target_row(p, last, h.tokens.len(), &mut x[r * d..(r + 1) * d]);
    }
    let mut scratch = Vec::new();
    let mut o = vec![T::zero(); n * d];
    for (l, li) in p.layout.dec.iter().enumerate() {
        let a = li.self_attn;
        let (n1, _) = layer_norm(&p.data, li.ln1, &x, d);
        let q = linear(&p.data, a.wq, a.bq, &n1, d, d);
        let k = linear(&p.data, a.wk, a.bk, &n1, d, d);
        let v = linear(&p.data, a.wv, a.bv, &n1, d, d);
        for (r, h) in hyps.iter_mut().enumerate() {
            h.k[l].extend_from_slice(&k[r * d..(r + 1) * d]);
            h.v[l].extend_from_slice(&v[r * d..(r + 1) * d]);
            let len = h.k[l].len() / d;
            attend_row(&q[r * d..(r + 1) * d], &h.k[l], &h.v[l], len, heads, &mut o[r * d..(r + 1) * d], &mut scratch);
        }
        add_into(&mut x, &linear(&p.data, a.wo, a.bo, &o, d, d));

        let c = li.cross_attn;
        let (n2, _) = layer_norm(&p.data, li.ln2, &x, d);
        let q = linear(&p.data, c.wq, c.bq, &n2, d, d);
        for (r, h) in hyps.iter().enumerate() {
            let m = &mems[h.mem];
            attend_row(&q[r * d..(r + 1) * d], &m.k[l], &m.v[l], m.len, heads, &mut o[r * d..(r + 1) * d], &mut scratch);
        }
        add_into(&mut x, &linear(&p.data, c.wo, c.bo, &o, d, d));

        let (n3, _) = layer_norm(&p.data, li.ln3, &x, d);
        let (f, _) = ffn(&p.data, li.ffn, &n3, d, ff);
        add_into(&mut x, &f);
    }
    let (hid, _) = layer_norm(&p.data, p.layout.dec_norm, &x, d);
    let logits = linear(&p.data, p.layout.out_w, p.layout.out_b, &hid, d, vocab);
    let mut out = Vec::with_capacity(n * vocab);
    for row in logits.chunks(vocab) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max).f64();
        let z: f64 = row.iter().map(|v| (v.f64() - m).exp()).sum();
        let lse = m + z.ln();
        out.extend(row.iter().map(|v| v.f64() - lse));
    }
    out
}

fn new_hyp<T: Clone>(mem: usize, layers: usize) -> Hyp<T> {
    Hyp { mem, tokens: Vec::new(), k: vec![Vec::new(); layers], v: vec![Vec::new(); layers], score: 0.0 }
}

/// Highest entry; ties go to the lowest id.
fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Bounds the source to the model's length limit, keeping its final EOS.
fn clip_source(mut src: Vec<u32>, max_len: usize) -> Vec<u32> {
    if src.len() > max_len {
        src.truncate(max_len - 1);
        src.push(EOS);
    }
    src
}

/// Greedy decoding of many sources at once. Returns generated ids (without
/// EOS) and truncation flags, in input order.
pub fn greedy_ids<T: Float>(
    p: &Params<T>,
    srcs: &[Vec<u32>],
    factors: &[u32],
    caps: &[usize],
) -> Vec<(Vec<u32>, bool)> {
    let srcs: Vec<Vec<u32>> = srcs.iter().map(|s| clip_source(s.clone(), p.cfg.max_len)).collect();
    let mems = encode_sources(p, &srcs, factors);
    let vocab = p.cfg.token_vocab;
    let layers = p.cfg.dec_layers;
    let mut done: Vec<Option<(Vec<u32>, bool)>> = vec![None; srcs.len()];
    let mut live: Vec<Hyp<T>> = (0..srcs.len()).map(|i| new_hyp(i, layers)).collect();
    live.retain(|h| {
        if caps[h.mem] == 0 {
            done[h.mem] = Some((Vec::new(), true));
            false
        } else {
            true
        }
    });
    while !live.is_empty() {
        let lp = step(p, &mems, &mut live);
        let mut next = Vec::with_capacity(live.len());
        for (r, mut h) in live.into_iter().enumerate() {
            let w = argmax(&lp[r * vocab..(r + 1) * vocab]);
            if w == EOS {
                done[h.mem] = Some((h.tokens, false));
                continue;
            }
            h.tokens.push(w);
            if h.tokens.len() >= caps[h.mem] {
                done[h.mem] = Some((h.tokens, true));
            } else {
                next.push(h);
            }
        }
        live = next;
    }
    done.into_iter().map(Option::unwrap).collect()
}

/// Beam search for one source. Finished hypotheses are ranked by
/// `log p / length^alpha` (length counts EOS).
pub fn beam_ids<T: Float>(
    p: &Params<T>,
    src: &[u32],
    factor: u32,
    cap: usize,
    beam: usize,
    alpha: f64,
) -> (Vec<u32>, bool) {
    let beam = beam.max(1);
    let src = clip_source(src.to_vec(), p.cfg.max_len);
    let mems = encode_sources(p, &[src], &[factor]);
    let vocab = p.cfg.token_vocab;
    let mut live = vec![new_hyp::<T>(0, p.cfg.dec_layers)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    if cap == 0 {
        return (Vec::new(), true);
    }
    loop {
        let lp = step(p, &mems, &mut live);
        let mut cand: Vec<(f64, usize, u32)> = Vec::new();
        for (r, h) in live.iter().enumerate() {
            let row = &lp[r * vocab..(r + 1) * vocab];
            let mut idx: Vec<u32> = (0..vocab as u32).collect();
            let k = beam.min(vocab);
            idx.select_nth_unstable_by(k - 1, |&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
            for &w in &idx[..k] {
                cand.push((h.score + row[w as usize], r, w));
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let slots = beam - finished.len();
        let mut next = Vec::new();
        for &(score, r, w) in cand.iter().take(slots) {
            if w == EOS {
                let len = live[r].tokens.len() + 1;
                finished.push((live[r].tokens.clone(), score / (len as f64).powf(alpha)));
            } else {
                let mut h = live[r].clone();
                h.tokens.push(w);
                h.score = score;
                next.push(h);
            }
        }
        live = next;
        if finished.len() >= beam || live.is_empty() {
            break;
        }
        if live[0].tokens.len() >= cap {
            break;
        }
    }
    if let Some(best) = finished
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(j.cmp(i)))
        .map(|(_, f)| f.0.clone())
    {
        return (best, false);
    }
    (live.into_iter().next().map(|h| h.tokens).unwrap_or_default(), true)
}

/// Translation front end: maps language codes to factor ids and text to
/// subword ids.
pub struct Translator<'a, T> {
    pub params: &'a Params<T>,
    pub subword: &'a SubwordModel,
    pub languages: &'a [LangId],
}

impl<'a, T: Float> Translator<'a, T> {
    pub fn new(params: &'a Params<T>, subword: &'a SubwordModel, languages: &'a [LangId]) -> Self {
        Translator { params, subword, languages }
    }

    pub fn factor(&self, lang: &LangId) -> Result<u32> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .map(|i| i as u32)
            .ok_or_else(|| Error::Factor(format!("unknown target language `{lang}`")))
    }

    pub fn translate(&self, text: &str, tgt: &LangId, settings: &DecodeSettings) -> Result<Translation> {
        Ok(self.translate_batch(&[(text, tgt)], settings)?.pop().unwrap())
    }

    /// Translates many inputs; greedy mode decodes them in batches.
    pub fn translate_batch(&self, items: &[(&str, &LangId)], settings: &DecodeSettings) -> Result<Vec<Translation>> {
        const CHUNK: usize = 64;
        let mut srcs = Vec::with_capacity(items.len());
        let mut factors = Vec::with_capacity(items.len());
        for (text, lang) in items {
            factors.push(self.factor(lang)?);
            srcs.push(self.subword.encode_with_eos(text));
        }
        let max = self.params.cfg.max_len;
        let caps: Vec<usize> = srcs.iter().map(|s| settings.cap(s.len(), max)).collect();
        let mut raw: Vec<(Vec<u32>, bool)> = Vec::with_capacity(items.len());
        match settings.mode {
            DecodeMode::Greedy => {
                // group similar lengths; results are put back in input order
                let mut order: Vec<usize> = (0..srcs.len()).collect();
                order.sort_by_key(|&i| srcs[i].len());
                let mut out = vec![None; srcs.len()];
                for chunk in order.chunks(CHUNK) {
                    let s: Vec<Vec<u32>> = chunk.iter().map(|&i| srcs[i].clone()).collect();
                    let f: Vec<u32> = chunk.iter().map(|&i| factors[i]).collect();
                    let c: Vec<usize> = chunk.iter().map(|&i| caps[i]).collect();
                    for (&i, r) in chunk.iter().zip(greedy_ids(self.params, &s, &f, &c)) {
                        out[i] = Some(r);
                    }
                }
                raw.extend(out.into_iter().map(Option::unwrap));
            }
            DecodeMode::Beam => {
                for i in 0..srcs.len() {
                    raw.push(beam_ids(self.params, &srcs[i], factors[i], caps[i], settings.beam_size, settings.length_alpha));
                }
            }
        }
        raw.into_iter()
            .map(|(ids, truncated)| Ok(Translation { text: self.subword.decode(&ids)?, ids, truncated }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmt::model::{batch_loss, Example, FactoredBatch};
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
            label_smoothing: 0.0,
            max_len: 12,
        }
    }

    #[test]
    fn incremental_step_matches_full_forward() {
        // Teacher-forced log-likelihood via the cached decoder equals the batch loss.
        let p = Params::<f64>::init(&cfg(), 4).unwrap();
        let ex = Example { src: vec![5, 6, 7, EOS], tgt: vec![8, 9, 10], factor: 1 };
        let full = batch_loss(&p, &FactoredBatch::new([&ex])).unwrap();
        let mems = encode_sources(&p, &[ex.src.clone()], &[1]);
        let mut h = vec![new_hyp::<f64>(0, 2)];
        let mut nll = 0.0;
        for &gold in ex.tgt.iter().chain([EOS].iter()) {
            let lp = step(&p, &mems, &mut h);
            nll -= lp[gold as usize];
            h[0].tokens.push(gold);
        }
        assert!((nll - full.nll).abs() < 1e-9, "{nll} vs {}", full.nll);
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in 0..5 {
            let p = Params::<f32>::init(&cfg(), seed).unwrap();
            for src in [vec![5u32, 6, EOS], vec![EOS], vec![9, 9, 9, 9, EOS]] {
                for f in 0..3 {
                    let g = greedy_ids(&p, &[src.clone()], &[f], &[8]).pop().unwrap();
                    let b = beam_ids(&p, &src, f, 8, 1, 1.0);
                    assert_eq!(g, b);
                }
            }
        }
    }

    #[test]
    fn batched_greedy_matches_single() {
        let p = Params::<f32>::init(&cfg(), 2).unwrap();
        let srcs = vec![vec![5u32, 6, EOS], vec![EOS], vec![9, 9, 9, 9, EOS]];
        let all = greedy_ids(&p, &srcs, &[0, 1, 2], &[8, 8, 8]);
        for (i, s) in srcs.iter().enumerate() {
            assert_eq!(greedy_ids(&p, &[s.clone()], &[i as u32], &[8])[0], all[i]);
        }
    }

    #[test]
    fn truncation_is_flagged() {
        let p = Params::<f32>::init(&cfg(), 1).unwrap();
        let (ids, truncated) = greedy_ids(&p, &[vec![5, EOS]], &[0], &[3]).pop().unwrap();
        assert!(ids.len() <= 3);
        assert_eq!(truncated, ids.len() == 3);
        let (ids, truncated) = beam_ids(&p, &[5, EOS], 0, 0, 4, 1.0);
        assert!(ids.is_empty() && truncated);
    }
}
