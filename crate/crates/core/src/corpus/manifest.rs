//! Corpus manifest: a TOML file naming the language set, per-pair files and
//! roles, and monolingual sets. Relative paths resolve against the manifest's
//! directory.
//!
//! ```toml
//! languages = ["et", "fi", "vro"]
//!
//! [[pairs]]
//! src = "et"
//! tgt = "fi"
//! role = "high"            # high | low | zero
//! raw_src = "raw/et-fi.et" # optional, consumed by `prepare`
//! raw_tgt = "raw/et-fi.fi"
//! train_src = "parallel/et-fi/train.et"
//! train_tgt = "parallel/et-fi/train.fi"
//! valid_src = "parallel/et-fi/valid.et"
//! valid_tgt = "parallel/et-fi/valid.fi"
//! test_src = "parallel/et-fi/test.et"
//! test_tgt = "parallel/et-fi/test.fi"
//!
//! [[mono]]
//! lang = "vro"
//! sets = ["mono/vro/set1.txt", "mono/vro/set2.txt"]
//!
//! [lexicons]
//! vro = "lexicon/vro.txt"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_mono, load_parallel, load_parallel_tsv, Direction, LangId, MonoCorpus, ParallelCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRole {
    High,
    Low,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub src: LangId,
    pub tgt: LangId,
    pub role: PairRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_src: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_tgt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_tsv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_src: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_tgt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_src: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_tgt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_src: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_tgt: Option<PathBuf>,
}

impl PairEntry {
    pub fn new(src: LangId, tgt: LangId, role: PairRole) -> Self {
        PairEntry {
            src,
            tgt,
            role,
            raw_src: None,
            raw_tgt: None,
            raw_tsv: None,
            train_src: None,
            train_tgt: None,
            valid_src: None,
            valid_tgt: None,
            test_src: None,
            test_tgt: None,
        }
    }

    pub fn direction(&self) -> Direction {
        Direction {
            src: self.src.clone(),
            tgt: self.tgt.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonoEntry {
    pub lang: LangId,
    pub sets: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Raw,
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub languages: Vec<LangId>,
    #[serde(default)]
    pub pairs: Vec<PairEntry>,
    #[serde(default)]
    pub mono: Vec<MonoEntry>,
    #[serde(default)]
    pub lexicons: BTreeMap<LangId, PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: CorpusManifest =
            toml::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::format("manifest", e.to_string()))?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.languages.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.languages.len() {
            return Err(Error::config("manifest declares a language twice"));
        }
        let known = |l: &LangId| self.languages.contains(l);
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.pairs {
            if !known(&p.src) || !known(&p.tgt) {
                return Err(Error::config(format!(
                    "pair {}-{} uses an undeclared language",
                    p.src, p.tgt
                )));
            }
            let d = Direction::new(p.src.clone(), p.tgt.clone())?;
            if !seen.insert(d.unordered()) {
                return Err(Error::config(format!("pair {d} is declared twice")));
            }
        }
        for m in &self.mono {
            if !known(&m.lang) {
                return Err(Error::config(format!("mono set for undeclared language {}", m.lang)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn pair(&self, d: &Direction) -> Option<&PairEntry> {
        self.pairs
            .iter()
            .find(|p| p.direction() == *d || p.direction() == d.reversed())
    }

    pub fn pairs_with_role(&self, role: PairRole) -> impl Iterator<Item = &PairEntry> {
        self.pairs.iter().filter(move |p| p.role == role)
    }

    /// Loads one split of a pair in the pair's declared direction.
    pub fn load_pair(&self, entry: &PairEntry, split: SplitName) -> Result<ParallelCorpus> {
        let d = entry.direction();
        let missing = |what: &str| {
            Error::config(format!("pair {d} has no {what} files in the manifest"))
        };
        let (s, t) = match split {
            SplitName::Raw => {
                if let Some(tsv) = &entry.raw_tsv {
                    return load_parallel_tsv(self.resolve(tsv), d);
                }
                (&entry.raw_src, &entry.raw_tgt)
            }
            SplitName::Train => (&entry.train_src, &entry.train_tgt),
            SplitName::Valid => (&entry.valid_src, &entry.valid_tgt),
            SplitName::Test => (&entry.test_src, &entry.test_tgt),
        };
        match (s, t) {
            (Some(s), Some(t)) => load_parallel(self.resolve(s), self.resolve(t), d),
            (None, None) if split == SplitName::Train && entry.role == PairRole::Zero => {
                Ok(ParallelCorpus::new(d))
            }
            _ => Err(missing(match split {
                SplitName::Raw => "raw",
                SplitName::Train => "train",
                SplitName::Valid => "valid",
                SplitName::Test => "test",
            })),
        }
    }

    /// Monolingual set `index` (0-based) for `lang`.
    pub fn load_mono_set(&self, lang: &LangId, index: usize) -> Result<MonoCorpus> {
        let entry = self
            .mono
            .iter()
            .find(|m| &m.lang == lang)
            .ok_or_else(|| Error::config(format!("no monolingual data for {lang}")))?;
        let p = entry
            .sets
            .get(index)
            .ok_or_else(|| Error::config(format!("{lang} has no monolingual set {}", index + 1)))?;
        load_mono(self.resolve(p), lang.clone())
    }

    pub fn lexicon(&self, lang: &LangId) -> Result<Option<Vec<String>>> {
        match self.lexicons.get(lang) {
            None => Ok(None),
            Some(p) => Ok(Some(load_mono(self.resolve(p), lang.clone())?.lines)),
        }
    }
}
