use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::float::Float;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub token_vocab: usize,
    /// Number of target languages the factor can name.
    pub factor_vocab: usize,
    /// Width of the factor embedding concatenated to the source token
    /// embedding; 0 disables factors.
    pub factor_dim: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub max_len: usize,
}

impl ModelConfig {
    /// Full-size transformer-base shape (6+6 layers, 8 heads, width 512).
    pub fn full_preset(token_vocab: usize, factor_vocab: usize) -> Self {
        ModelConfig {
            enc_layers: 6,
            dec_layers: 6,
            heads: 8,
            d_model: 512,
            d_ff: 2048,
            token_vocab,
            factor_vocab,
            factor_dim: 8,
            dropout: 0.1,
            label_smoothing: 0.1,
            max_len: 256,
        }
    }

    /// Small CPU-friendly shape.
    pub fn desk_preset(token_vocab: usize, factor_vocab: usize) -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            d_model: 128,
            d_ff: 512,
            token_vocab,
            factor_vocab,
            factor_dim: 8,
            dropout: 0.1,
            label_smoothing: 0.1,
            max_len: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("layer counts must be positive".into());
        }
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return bad("d_ff and max_len must be positive".into());
        }
        if self.token_vocab <= crate::subword::NUM_SPECIALS as usize {
            return bad(format!("token_vocab {} too small", self.token_vocab));
        }
        if self.factor_vocab < 2 {
            return bad(format!("factor_vocab {} must be at least 2", self.factor_vocab));
        }
        if self.factor_dim >= self.d_model {
            return bad(format!("factor_dim {} must be below d_model {}", self.factor_dim, self.d_model));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("dropout and label_smoothing must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Closed-form parameter count for this shape.
    pub fn param_count(&self) -> usize {
        let (d, f, v, ff) = (self.d_model, self.factor_dim, self.token_vocab, self.d_ff);
        let attn = 4 * d * d + 4 * d;
        let ffn = 2 * d * ff + ff + d;
        let ln = 2 * d;
        v * (d - f)
            + self.factor_vocab * f
            + v * d
            + self.enc_layers * (attn + ffn + 2 * ln)
            + self.dec_layers * (2 * attn + ffn + 3 * ln)
            + 2 * ln
            + d * v
            + v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    /// Uniform with unit variance after the sqrt(d_model) embedding scale.
    Embedding,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: InitKind,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one layer-norm's gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct NormIdx {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncIdx {
    pub ln1: NormIdx,
    pub attn: AttnIdx,
    pub ln2: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct DecIdx {
    pub ln1: NormIdx,
    pub self_attn: AttnIdx,
    pub ln2: NormIdx,
    pub cross_attn: AttnIdx,
    pub ln3: NormIdx,
    pub ffn: FfnIdx,
}

/// Named tensors packed into one flat buffer; shapes follow from the config.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub src_emb: usize,
    pub factor_emb: usize,
    pub tgt_emb: usize,
    pub enc: Vec<EncIdx>,
    pub dec: Vec<DecIdx>,
    pub enc_norm: NormIdx,
    pub dec_norm: NormIdx,
    pub out_w: usize,
    pub out_b: usize,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: InitKind) -> usize {
        let offset = self.total;
        let t = TensorInfo { name, shape, offset, init };
        self.total += t.len();
        self.tensors.push(t);
        offset
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            g: self.add(format!("{prefix}.g"), vec![d], InitKind::Ones),
            b: self.add(format!("{prefix}.b"), vec![d], InitKind::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let mut w = |n: &str| self.add(format!("{prefix}.{n}"), vec![d, d], InitKind::Xavier);
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        let mut b = |n: &str| self.add(format!("{prefix}.{n}"), vec![d], InitKind::Zeros);
        let (bq, bk, bv, bo) = (b("bq"), b("bk"), b("bv"), b("bo"));
        AttnIdx { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn ffn(&mut self, prefix: &str, d: usize, ff: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), vec![d, ff], InitKind::Xavier),
            b1: self.add(format!("{prefix}.b1"), vec![ff], InitKind::Zeros),
            w2: self.add(format!("{prefix}.w2"), vec![ff, d], InitKind::Xavier),
            b2: self.add(format!("{prefix}.b2"), vec![d], InitKind::Zeros),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let (d, v, f) = (cfg.d_model, cfg.token_vocab, cfg.factor_dim);
        let mut b = Builder { tensors: Vec::new(), total: 0 };
        let src_emb = b.add("src_tok_emb".into(), vec![v, d - f], InitKind::Embedding);
        let factor_emb = b.add("factor_emb".into(), vec![cfg.factor_vocab, f], InitKind::Embedding);
        let tgt_emb = b.add("tgt_tok_emb".into(), vec![v, d], InitKind::Embedding);
        let enc = (0..cfg.enc_layers)
            .map(|i| EncIdx {
                ln1: b.norm(&format!("enc.{i}.ln1"), d),
                attn: b.attn(&format!("enc.{i}.self_attn"), d),
                ln2: b.norm(&format!("enc.{i}.ln2"), d),
                ffn: b.ffn(&format!("enc.{i}.ffn"), d, cfg.d_ff),
            })
            .collect();
        let dec = (0..cfg.dec_layers)
            .map(|i| DecIdx {
                ln1: b.norm(&format!("dec.{i}.ln1"), d),
                self_attn: b.attn(&format!("dec.{i}.self_attn"), d),
                ln2: b.norm(&format!("dec.{i}.ln2"), d),
                cross_attn: b.attn(&format!("dec.{i}.cross_attn"), d),
                ln3: b.norm(&format!("dec.{i}.ln3"), d),
                ffn: b.ffn(&format!("dec.{i}.ffn"), d, cfg.d_ff),
            })
            .collect();
        let enc_norm = b.norm("enc.ln", d);
        let dec_norm = b.norm("dec.ln", d);
        let out_w = b.add("out.w".into(), vec![d, v], InitKind::Xavier);
        let out_b = b.add("out.b".into(), vec![v], InitKind::Zeros);
        Layout {
            tensors: b.tensors,
            total: b.total,
            src_emb,
            factor_emb,
            tgt_emb,
            enc,
            dec,
            enc_norm,
            dec_norm,
            out_w,
            out_b,
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Model parameters: a flat buffer interpreted through [`Layout`].
#[derive(Debug, Clone)]
pub struct Params<T> {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Float> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let data = vec![T::zero(); layout.total];
        Ok(Params { cfg: cfg.clone(), layout, data })
    }

    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &p.layout.tensors {
            let limit = match t.init {
                InitKind::Zeros => continue,
                InitKind::Ones => {
                    p.data[t.range()].iter_mut().for_each(|x| *x = T::one());
                    continue;
                }
                InitKind::Xavier => (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt(),
                InitKind::Embedding => (3.0 / cfg.d_model as f64).sqrt(),
            };
            for x in &mut p.data[t.range()] {
                *x = T::lit(rng.gen_range(-limit..limit));
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.layout.get(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn convert<U: Float>(&self) -> Params<U> {
        Params {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::lit(x.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Copies every tensor of `parent` into a fresh parameter set for `cfg`.
/// All tensors must match by name and shape.
pub fn init_from<T: Float>(parent: &Params<T>, cfg: &ModelConfig) -> Result<Params<T>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut mismatched = Vec::new();
    for t in &layout.tensors {
        match parent.layout.get(&t.name) {
            Some(p) if p.shape == t.shape => {}
            Some(p) => mismatched.push(format!("{}: parent {:?} vs child {:?}", t.name, p.shape, t.shape)),
            None => mismatched.push(format!("{}: missing in parent", t.name)),
        }
    }
    for p in &parent.layout.tensors {
        if layout.get(&p.name).is_none() {
            mismatched.push(format!("{}: missing in child", p.name));
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::Transfer(mismatched));
    }
    let mut data = vec![T::zero(); layout.total];
    for t in &layout.tensors {
        let p = parent.layout.get(&t.name).unwrap();
        data[t.range()].copy_from_slice(&parent.data[p.range()]);
    }
    Ok(Params { cfg: cfg.clone(), layout, data })
}
