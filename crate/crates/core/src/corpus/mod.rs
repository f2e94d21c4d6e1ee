//! Parallel and monolingual corpora: loading, cleaning, deduplication,
//! direction reversal, proportional hold-out and down-sampling.

mod clean;
mod io;
mod manifest;
mod prepare;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::{clean, dedup, dedup_mono, normalize_text, CleanReport, CleaningConfig, DedupReport};
pub use io::{load_mono, load_parallel, load_parallel_tsv, save_mono, save_parallel, write_lines};
pub use manifest::{CorpusManifest, MonoEntry, PairEntry, PairRole, SplitName};
pub use prepare::{prepare, PrepareConfig, PrepareReport};
pub use split::{downsample, largest_remainder, split_holdout, HoldoutSplit, SplitSpec};

/// Short lowercase language code, e.g. `et`, `vro`, `sme`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LangId(String);

impl LangId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::config("language code must be nonempty"));
        }
        if !code
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(Error::config(format!(
                "language code `{code}` must be lowercase ASCII"
            )));
        }
        Ok(LangId(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LangId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for LangId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LangId::new(s)
    }
}

impl TryFrom<String> for LangId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        LangId::new(s)
    }
}

impl From<LangId> for String {
    fn from(l: LangId) -> String {
        l.0
    }
}

/// Convenience for tests and literals; panics on an invalid code.
pub fn lang(code: &str) -> LangId {
    LangId::new(code).expect("valid language code")
}

/// A translation direction, displayed as `src-tgt`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub src: LangId,
    pub tgt: LangId,
}

impl Direction {
    pub fn new(src: LangId, tgt: LangId) -> Result<Self> {
        if src == tgt {
            return Err(Error::config(format!("direction {src}-{tgt} has equal sides")));
        }
        Ok(Direction { src, tgt })
    }

    pub fn reversed(&self) -> Direction {
        Direction {
            src: self.tgt.clone(),
            tgt: self.src.clone(),
        }
    }

    /// Unordered key: the two languages in sorted order.
    pub fn unordered(&self) -> (LangId, LangId) {
        if self.src <= self.tgt {
            (self.src.clone(), self.tgt.clone())
        } else {
            (self.tgt.clone(), self.src.clone())
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::config(format!("direction `{s}` is not of the form src-tgt")))?;
        Direction::new(a.parse()?, b.parse()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Human,
    BackTranslated,
    ForwardTranslated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentencePair {
    pub src_lang: LangId,
    pub tgt_lang: LangId,
    pub src: String,
    pub tgt: String,
    pub origin: Origin,
}

impl SentencePair {
    pub fn direction(&self) -> Direction {
        Direction {
            src: self.src_lang.clone(),
            tgt: self.tgt_lang.clone(),
        }
    }

    pub fn reversed(&self) -> SentencePair {
        SentencePair {
            src_lang: self.tgt_lang.clone(),
            tgt_lang: self.src_lang.clone(),
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            origin: self.origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub direction: Direction,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(direction: Direction) -> Self {
        ParallelCorpus {
            direction,
            pairs: Vec::new(),
        }
    }

    /// Builds a corpus of human pairs from aligned `(src, tgt)` strings.
    pub fn from_pairs<S: Into<String>>(
        direction: Direction,
        pairs: impl IntoIterator<Item = (S, S)>,
    ) -> Self {
        let pairs = pairs
            .into_iter()
            .map(|(s, t)| SentencePair {
                src_lang: direction.src.clone(),
                tgt_lang: direction.tgt.clone(),
                src: s.into(),
                tgt: t.into(),
                origin: Origin::Human,
            })
            .collect();
        ParallelCorpus { direction, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.src.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.tgt.as_str())
    }

    pub fn push(&mut self, pair: SentencePair) -> Result<()> {
        if pair.direction() != self.direction {
            return Err(Error::Input(format!(
                "pair direction {} does not match corpus direction {}",
                pair.direction(),
                self.direction
            )));
        }
        self.pairs.push(pair);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonoCorpus {
    pub lang: LangId,
    pub lines: Vec<String>,
}

impl MonoCorpus {
    pub fn new(lang: LangId, lines: Vec<String>) -> Self {
        MonoCorpus { lang, lines }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// Swaps source and target of every pair; origin tags are kept.
pub fn reverse(c: &ParallelCorpus) -> ParallelCorpus {
    ParallelCorpus {
        direction: c.direction.reversed(),
        pairs: c.pairs.iter().map(SentencePair::reversed).collect(),
    }
}

/// Returns every input corpus followed by its reverse. The unordered language
/// pairs of the inputs must be distinct.
pub fn build_multilingual(corpora: &[ParallelCorpus]) -> Result<Vec<ParallelCorpus>> {
    let mut seen = std::collections::BTreeSet::new();
    for c in corpora {
        if !seen.insert(c.direction.unordered()) {
            let (a, b) = c.direction.unordered();
            return Err(Error::config(format!(
                "language pair {a}-{b} appears more than once"
            )));
        }
    }
    let mut out = Vec::with_capacity(corpora.len() * 2);
    for c in corpora {
        out.push(c.clone());
        out.push(reverse(c));
    }
    Ok(out)
}
