//! Experiment orchestration: toy language suites, stage specifications, the
//! resumable stage runner and language identification for zero-shot checks.

mod langid;
mod runner;
mod spec;
mod toy;

pub use langid::LanguageIdentifier;
pub use runner::{load_state, run, ExperimentReport, RunOptions, RunState, SingleScore, StageRecord, StageResult, ZeroShotScore};
pub use spec::{ExperimentSpec, ModelShape, Stage, BASELINES, MULTILINGUAL};
pub use toy::{build_lexicon, generate_suite, generate_toy_suite, Lexicon, ToyLanguage, ToyLanguageSpec, ToyPair, ToySuite};
