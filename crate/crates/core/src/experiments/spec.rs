//! Experiment specification files.
//!
//! ```toml
//! name = "toy"
//! seed = 11
//! manifest = "data/manifest.toml"   # relative to the spec file
//! vocab_size = 1000
//!
//! [model]
//! enc_layers = 2
//! # ...
//!
//! [train]
//! batch_words = 600
//! # ...
//!
//! [[stages]]
//! kind = "bilingual_baselines"
//!
//! [[stages]]
//! kind = "multilingual_baseline"
//!
//! [[stages]]
//! kind = "bt_iteration"
//! n = 1
//! mode = "equal_shares"
//! init_from = "Multilingual (ML)"   # omit for a run from random weights: "(*)"
//!
//! [[stages]]
//! kind = "fine_tune"
//! direction = "et-vro"
//! from = "Multilingual (ML)"
//!
//! [[stages]]
//! kind = "transfer"
//! parent_pair = "et-fi"
//! child_pair = "et-vro"
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::toy::ToyLanguageSpec;
use crate::corpus::Direction;
use crate::error::{Error, Result};
use crate::nmt::{DecodeSettings, ModelConfig};
use crate::synthesis::ShareMode;
use crate::trainer::TrainConfig;

/// Model hyperparameters without the vocabulary sizes, which come from the
/// subword model and the language set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub factor_dim: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub max_len: usize,
}

impl ModelShape {
    pub fn desk_preset() -> Self {
        let c = ModelConfig::desk_preset(0, 0);
        ModelShape {
            enc_layers: c.enc_layers,
            dec_layers: c.dec_layers,
            heads: c.heads,
            d_model: c.d_model,
            d_ff: c.d_ff,
            factor_dim: c.factor_dim,
            dropout: c.dropout,
            label_smoothing: c.label_smoothing,
            max_len: c.max_len,
        }
    }

    /// Small enough for the whole toy grid to train in minutes on one core.
    pub fn toy_preset() -> Self {
        ModelShape { d_model: 64, d_ff: 128, max_len: 64, ..Self::desk_preset() }
    }

    /// Bilingual models get no factor embedding.
    pub fn config(&self, token_vocab: usize, factor_vocab: usize, factored: bool) -> ModelConfig {
        ModelConfig {
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            token_vocab,
            factor_vocab,
            factor_dim: if factored { self.factor_dim } else { 0 },
            dropout: self.dropout,
            label_smoothing: self.label_smoothing,
            max_len: self.max_len,
        }
    }
}

mod dir_str {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Direction, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Direction, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub const BASELINES: &str = "Baselines";
pub const MULTILINGUAL: &str = "Multilingual (ML)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    /// One model per direction, trained on that direction's pairs only.
    BilingualBaselines {
        #[serde(default = "baselines_label")]
        label: String,
    },
    /// One factored model on every direction and its reverse.
    MultilingualBaseline {
        #[serde(default = "ml_label")]
        label: String,
    },
    /// Synthesis round `n` followed by training on human plus synthetic data.
    BtIteration {
        n: u32,
        mode: ShareMode,
        /// Stage whose best checkpoint initializes training; `None` trains
        /// from random weights.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_from: Option<String>,
        /// Stage whose model translates the monolingual data. Defaults to
        /// the multilingual baseline for `n = 1` and the latest iteration-1
        /// stage for `n = 2`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        generator: Option<String>,
        /// Also train on the forward-translation pairs.
        #[serde(default)]
        forward: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Continue training a multilingual stage on one direction only.
    FineTune {
        #[serde(with = "dir_str")]
        direction: Direction,
        from: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Initialize the child direction's model with the parent direction's
    /// bilingual baseline and train on the child data.
    Transfer {
        #[serde(with = "dir_str")]
        parent_pair: Direction,
        #[serde(with = "dir_str")]
        child_pair: Direction,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

fn baselines_label() -> String {
    BASELINES.into()
}

fn ml_label() -> String {
    MULTILINGUAL.into()
}

impl Stage {
    /// Row label, following the results-table naming: `+ BT1`, `+ BT1(*)`,
    /// `+ BT1 + FT1`, `+ BT2`, `+ BT1 + BT2(*)`.
    pub fn label(&self) -> String {
        match self {
            Stage::BilingualBaselines { label } | Stage::MultilingualBaseline { label } => label.clone(),
            Stage::BtIteration { label: Some(l), .. }
            | Stage::FineTune { label: Some(l), .. }
            | Stage::Transfer { label: Some(l), .. } => l.clone(),
            Stage::BtIteration { n, init_from, forward, .. } => {
                // (*) no pre-trained weights, (**) weights of a (*) model.
                let star = match init_from {
                    None => "(*)",
                    Some(p) if p.ends_with("(*)") => "(**)",
                    Some(_) => "",
                };
                let ft = if *forward { format!(" + FT{n}") } else { String::new() };
                if *n == 1 || star.is_empty() {
                    format!("+ BT{n}{ft}{star}")
                } else {
                    format!("+ BT1 + BT{n}{ft}{star}")
                }
            }
            Stage::FineTune { direction, from, .. } => format!("{from} fine-tuned on {direction}"),
            Stage::Transfer { parent_pair, child_pair, .. } => format!("{child_pair} on {parent_pair} weights"),
        }
    }

    /// Single-direction stages report one score rather than a table row.
    pub fn is_single_direction(&self) -> bool {
        matches!(self, Stage::FineTune { .. } | Stage::Transfer { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub seed: u64,
    /// Corpus manifest, relative to the spec file's directory.
    pub manifest: PathBuf,
    pub vocab_size: usize,
    pub model: ModelShape,
    pub train: TrainConfig,
    /// Decoding for evaluation and synthesis.
    #[serde(default = "DecodeSettings::greedy")]
    pub decode: DecodeSettings,
    /// Monolingual lines used per language and iteration; 0 keeps all.
    #[serde(default)]
    pub mono_limit: usize,
    /// Share of synthetic lines allowed to hit the length cap before
    /// generation aborts.
    #[serde(default = "default_max_synthesis_failure")]
    pub max_synthesis_failure: f64,
    /// Generate this toy suite into the manifest's directory when the
    /// manifest does not exist yet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyLanguageSpec>,
    pub stages: Vec<Stage>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_max_synthesis_failure() -> f64 {
    0.1
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: ExperimentSpec = toml::from_str(text).map_err(|e| Error::config(format!("experiment spec: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::from_toml(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn manifest_path(&self) -> PathBuf {
        if self.manifest.is_absolute() {
            self.manifest.clone()
        } else {
            self.base_dir.join(&self.manifest)
        }
    }

    /// Content hash of everything that influences results.
    pub fn hash(&self) -> String {
        let h = Sha256::digest(self.to_toml().as_bytes());
        h.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Checks labels are unique and every stage's dependencies run before it.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.vocab_size <= crate::subword::FIRST_PIECE as usize {
            return Err(Error::config(format!("vocab_size {} leaves no room for merges", self.vocab_size)));
        }
        if !(0.0..=1.0).contains(&self.max_synthesis_failure) {
            return Err(Error::config(format!("max_synthesis_failure {} is outside [0, 1]", self.max_synthesis_failure)));
        }
        if self.stages.is_empty() {
            return Err(Error::config("experiment has no stages"));
        }
        let mut done: Vec<(String, &Stage)> = Vec::new();
        let has = |done: &[(String, &Stage)], l: &str| done.iter().any(|(x, _)| x == l);
        for s in &self.stages {
            let label = s.label();
            if has(&done, &label) {
                return Err(Error::config(format!("stage label `{label}` used twice")));
            }
            let need = |what: &str, l: &str| -> Result<()> {
                if has(&done, l) {
                    Ok(())
                } else {
                    Err(Error::config(format!("stage `{label}` needs {what} `{l}` to run earlier")))
                }
            };
            match s {
                Stage::BilingualBaselines { .. } | Stage::MultilingualBaseline { .. } => {}
                Stage::BtIteration { n, init_from, generator, .. } => {
                    if !(1..=2).contains(n) {
                        return Err(Error::config(format!("stage `{label}`: only iterations 1 and 2 exist")));
                    }
                    if let Some(i) = init_from {
                        need("initial weights from", i)?;
                    }
                    match (n, generator) {
                        (_, Some(g)) => need("generator", g)?,
                        (1, None) => need("generator", MULTILINGUAL)?,
                        _ => {
                            if !done.iter().any(|(_, st)| matches!(st, Stage::BtIteration { n: 1, .. })) {
                                return Err(Error::config(format!("stage `{label}` needs a bt_iteration n = 1 stage first")));
                            }
                        }
                    }
                }
                Stage::FineTune { from, .. } => need("parent checkpoint", from)?,
                Stage::Transfer { .. } => need("parent baselines", BASELINES)?,
            }
            done.push((label, s));
        }
        let labels: BTreeSet<String> = self.stages.iter().map(Stage::label).collect();
        debug_assert_eq!(labels.len(), self.stages.len());
        Ok(())
    }

    /// The stage grid used for acceptance runs on the toy suite.
    pub fn toy_grid(manifest: PathBuf, seed: u64) -> Self {
        let ml = Some(MULTILINGUAL.to_string());
        ExperimentSpec {
            name: "toy-grid".into(),
            seed,
            manifest,
            vocab_size: 600,
            model: ModelShape::toy_preset(),
            train: TrainConfig {
                batch_words: 400,
                checkpoint_interval: 100,
                patience: 2,
                max_updates: 800,
                lr: 2e-3,
                warmup: 200,
                fine_tune_lr: 3e-4,
                seed,
                ..TrainConfig::default()
            },
            decode: DecodeSettings::greedy(),
            mono_limit: 0,
            max_synthesis_failure: default_max_synthesis_failure(),
            toy: Some(ToyLanguageSpec::grid_preset()),
            stages: vec![
                Stage::BilingualBaselines { label: BASELINES.into() },
                Stage::MultilingualBaseline { label: MULTILINGUAL.into() },
                Stage::BtIteration { n: 1, mode: ShareMode::EqualShares, init_from: ml.clone(), generator: None, forward: false, label: None },
                Stage::BtIteration { n: 2, mode: ShareMode::EqualShares, init_from: Some("+ BT1".into()), generator: None, forward: false, label: None },
                Stage::FineTune { direction: "et-vro".parse().unwrap(), from: MULTILINGUAL.into(), label: None },
                Stage::Transfer { parent_pair: "et-fi".parse().unwrap(), child_pair: "et-vro".parse().unwrap(), label: None },
            ],
            base_dir: PathBuf::new(),
        }
    }
}
