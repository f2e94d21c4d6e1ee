//! Low-resource multilingual machine translation workbench.
//!
//! A small transformer with target-language source factors, BPE subwords,
//! iterative back/forward-translation, transfer learning and fine-tuning,
//! sacreBLEU-compatible scoring, and an orchestrator that runs the whole
//! experiment grid on generated toy languages.

pub mod corpus;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nmt;
pub mod subword;
pub mod synthesis;
pub mod trainer;

pub use corpus::{Direction, LangId, MonoCorpus, Origin, ParallelCorpus, SentencePair};
pub use error::{Error, ErrorClass, Result};
pub use metrics::{bleu, chrf, tokenize_13a, BleuScore, ScoreReport};
pub use nmt::{Checkpoint, DecodeMode, DecodeSettings, ModelConfig, Params, Translation, Translator};
pub use subword::SubwordModel;
pub use trainer::TrainConfig;
