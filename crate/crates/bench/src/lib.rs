//! Shared fixtures for the benchmarks: a small toy corpus, a subword model
//! trained on it and a randomly initialized factored model.

use lrmt::experiments::{generate_suite, ToyLanguageSpec};
use lrmt::nmt::{Example, ModelConfig, Params};
use lrmt::SubwordModel;

pub struct Fixture {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub subword: SubwordModel,
    pub params: Params<f32>,
    pub examples: Vec<Example>,
}

pub fn fixture(pairs: usize) -> Fixture {
    let spec = ToyLanguageSpec::with_sizes(200, [pairs, 50, 50, 50, 50], 10, 50);
    let suite = generate_suite(&spec, 5).expect("toy suite");
    let (_, train, _, _) = &suite.pairs[0];
    let sources: Vec<String> = train.sources().map(String::from).collect();
    let targets: Vec<String> = train.targets().map(String::from).collect();
    let all: Vec<&str> = sources.iter().chain(&targets).map(String::as_str).collect();
    let subword = SubwordModel::train(&all, 600, 0).expect("bpe");
    let cfg = ModelConfig { d_model: 64, d_ff: 256, max_len: 64, ..ModelConfig::desk_preset(subword.vocab_size(), 5) };
    let params = Params::init(&cfg, 1).expect("params");
    let examples = sources.iter().zip(&targets).map(|(s, t)| Example::encode(&subword, s, t, 1)).collect();
    Fixture { sources, targets, subword, params, examples }
}
