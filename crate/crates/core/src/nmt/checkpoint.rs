//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `LRMTCKPT` magic, `u32` version, `u64` header length + JSON header
//! (config, languages, training metadata), `u32` tensor count, then per
//! tensor: `u16` name length + name, `u8` dtype (1 = f32), `u8` rank,
//! `u64` dims, raw values. Finally `u8` optimizer flag and, when set, the
//! step count plus both moment buffers as `u64` length + values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::float::Float;
use super::params::{Layout, ModelConfig, Params};
use crate::corpus::LangId;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LRMTCKPT";
const VERSION: u32 = 1;

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    /// Fingerprint of the checkpoint training started from, if any.
    pub parent: Option<String>,
    /// Hash of the training data manifest.
    pub data_hash: String,
    pub subword: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: Params<f32>,
    /// Factor id `i` means "translate into `languages[i]`".
    pub languages: Vec<LangId>,
    pub optimizer: Option<OptimizerState>,
    pub valid_ppl: f64,
    pub ppl_history: Vec<(u64, f64)>,
    pub is_best: bool,
    pub provenance: Provenance,
}

impl PartialEq for Params<f32> {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.data == other.data
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    languages: Vec<LangId>,
    step: u64,
    /// Absent until the checkpoint has been evaluated (JSON has no infinity).
    valid_ppl: Option<f64>,
    ppl_history: Vec<(u64, f64)>,
    is_best: bool,
    provenance: Provenance,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(f32::read_le).collect())
    }
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    out.reserve(xs.len() * 4);
    for &x in xs {
        x.write_le(out);
    }
}

impl Checkpoint {
    pub fn new(params: Params<f32>, languages: Vec<LangId>) -> Result<Self> {
        if languages.len() != params.cfg.factor_vocab {
            return Err(Error::config(format!(
                "{} languages for a factor vocabulary of {}",
                languages.len(),
                params.cfg.factor_vocab
            )));
        }
        Ok(Checkpoint {
            step: 0,
            params,
            languages,
            optimizer: None,
            valid_ppl: f64::INFINITY,
            ppl_history: Vec::new(),
            is_best: false,
            provenance: Provenance::default(),
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.params.cfg
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.data.len() * 4 + 4096);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = Header {
            config: self.params.cfg.clone(),
            languages: self.languages.clone(),
            step: self.step,
            valid_ppl: Some(self.valid_ppl).filter(|p| p.is_finite()),
            ppl_history: self.ppl_history.clone(),
            is_best: self.is_best,
            provenance: self.provenance.clone(),
        };
        let h = serde_json::to_vec(&header).expect("header serializes");
        out.extend_from_slice(&(h.len() as u64).to_le_bytes());
        out.extend_from_slice(&h);
        out.extend_from_slice(&(self.params.layout.tensors.len() as u32).to_le_bytes());
        for t in &self.params.layout.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(f32::DTYPE);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f32s(&mut out, &self.params.data[t.range()]);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                for buf in [&o.m, &o.v] {
                    out.extend_from_slice(&(buf.len() as u64).to_le_bytes());
                    put_f32s(&mut out, buf);
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("checkpoint", d);
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        let count = r.u32()? as usize;
        if count != layout.tensors.len() {
            return Err(bad(format!("{count} tensors, config implies {}", layout.tensors.len())));
        }
        let mut data = vec![0f32; layout.total];
        for t in &layout.tensors {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| bad("tensor name not UTF-8".into()))?;
            if name != t.name {
                return Err(bad(format!("expected tensor `{}`, found `{name}`", t.name)));
            }
            if r.u8()? != f32::DTYPE {
                return Err(bad(format!("tensor `{name}` has unsupported dtype")));
            }
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if dims != t.shape {
                return Err(bad(format!("tensor `{name}` has shape {dims:?}, expected {:?}", t.shape)));
            }
            data[t.range()].copy_from_slice(&r.f32s(t.len())?);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut bufs = Vec::new();
                for _ in 0..2 {
                    let n = r.u64()? as usize;
                    if n != layout.total {
                        return Err(bad(format!("optimizer buffer of {n} values, expected {}", layout.total)));
                    }
                    bufs.push(r.f32s(n)?);
                }
                let v = bufs.pop().unwrap();
                let m = bufs.pop().unwrap();
                Some(OptimizerState { step, m, v })
            }
            f => return Err(bad(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(bad(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let params = Params { cfg: header.config, layout, data };
        Ok(Checkpoint {
            step: header.step,
            params,
            languages: header.languages,
            optimizer,
            valid_ppl: header.valid_ppl.unwrap_or(f64::INFINITY),
            ppl_history: header.ppl_history,
            is_best: header.is_best,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename so a crash never leaves a half-written checkpoint
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Content hash of config, languages and parameters (not of training
    /// metadata), as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        params_fingerprint(&self.params, &self.languages)
    }
}

pub fn params_fingerprint(p: &Params<f32>, languages: &[LangId]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&p.cfg).unwrap());
    for l in languages {
        h.update(l.as_str().as_bytes());
        h.update([0]);
    }
    let mut bytes = Vec::with_capacity(p.data.len() * 4);
    put_f32s(&mut bytes, &p.data);
    h.update(&bytes);
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;

    fn cfg() -> ModelConfig {
        ModelConfig {
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            token_vocab: 280,
            factor_vocab: 2,
            factor_dim: 2,
            dropout: 0.1,
            label_smoothing: 0.1,
            max_len: 16,
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let p = Params::<f32>::init(&cfg(), 3).unwrap();
        let n = p.data.len();
        let mut c = Checkpoint::new(p, vec![lang("aa"), lang("bb")]).unwrap();
        c.step = 120;
        c.valid_ppl = 3.141_592_653_589_793;
        c.ppl_history = vec![(60, 4.5), (120, 3.141_592_653_589_793)];
        c.is_best = true;
        c.optimizer = Some(OptimizerState { step: 120, m: vec![0.5; n], v: vec![0.25; n] });
        c.provenance.stage = "ml".into();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn unevaluated_checkpoint_round_trips() {
        let c = Checkpoint::new(Params::<f32>::init(&cfg(), 3).unwrap(), vec![lang("aa"), lang("bb")]).unwrap();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.valid_ppl, f64::INFINITY);
        assert_eq!(back, c);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let c = Checkpoint::new(Params::<f32>::init(&cfg(), 3).unwrap(), vec![lang("aa"), lang("bb")]).unwrap();
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn language_count_must_match_factors() {
        let p = Params::<f32>::init(&cfg(), 3).unwrap();
        assert!(Checkpoint::new(p, vec![lang("aa")]).is_err());
    }
}
