//! Helpers shared by the acceptance target and the ordinary test files.
#![allow(dead_code)]

pub mod props;

use std::time::{Duration, Instant};

use lrmt::corpus::lang;
use lrmt::metrics::bleu;
use lrmt::nmt::{batch_loss, loss_and_grad, Checkpoint, DecodeSettings, Example, FactoredBatch, ModelConfig, Params, Translator};
use lrmt::subword::{SubwordModel, EOS};
use lrmt::trainer::{evaluate_perplexity, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn metric_fixture() -> (Vec<String>, Vec<String>) {
    include_str!("../fixtures/metric_pairs.tsv")
        .lines()
        .map(|l| {
            let (h, r) = l.split_once('\t').expect("tab-separated pair");
            (h.to_string(), r.to_string())
        })
        .unzip()
}

pub fn metric_expected() -> toml::Table {
    include_str!("../fixtures/metric_expected.toml").parse().unwrap()
}

pub fn expected_num(t: &toml::Table, section: &str, key: &str) -> f64 {
    t[section][key].as_float().unwrap()
}

/// Two layers each side, width 16, no dropout.
pub fn gradcheck_cfg() -> ModelConfig {
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

pub fn gradcheck_batch() -> Vec<Example> {
    vec![
        Example { src: vec![5, 6, 7, EOS], tgt: vec![8, 9], factor: 1 },
        Example { src: vec![10, EOS], tgt: vec![11, 12, 13, 14], factor: 2 },
        Example { src: vec![15, 16, 17, 18, 19, EOS], tgt: vec![20, 5], factor: 0 },
    ]
}

/// Parameter groups: every tensor whose name starts with one of the prefixes.
pub const GROUPS: &[(&str, &[&str])] = &[
    ("source embedding", &["src_tok_emb"]),
    ("factor embedding", &["factor_emb"]),
    ("target embedding", &["tgt_tok_emb"]),
    ("encoder attention", &["enc.0.self_attn", "enc.1.self_attn"]),
    ("encoder ffn", &["enc.0.ffn", "enc.1.ffn"]),
    ("encoder norms", &["enc.0.ln", "enc.1.ln", "enc.ln"]),
    ("decoder self-attention", &["dec.0.self_attn", "dec.1.self_attn"]),
    ("cross-attention", &["dec.0.cross_attn", "dec.1.cross_attn"]),
    ("decoder ffn", &["dec.0.ffn", "dec.1.ffn"]),
    ("decoder norms", &["dec.0.ln", "dec.1.ln", "dec.ln"]),
    ("output projection", &["out."]),
];

/// Max relative error between the analytic gradient and central finite
/// differences over `per_group` random coordinates of each group, in f64.
/// Embedding coordinates are drawn from rows the batch actually uses.
pub fn gradcheck(per_group: usize) -> Vec<(&'static str, f64)> {
    let p = Params::<f64>::init(&gradcheck_cfg(), 11).unwrap();
    let ex = gradcheck_batch();
    let b = FactoredBatch::new(&ex);
    let (_, grad) = loss_and_grad(&p, &b, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let used_src: Vec<u32> = ex.iter().flat_map(|e| e.src.clone()).collect();
    let used_tgt: Vec<u32> = ex.iter().flat_map(|e| e.tgt.iter().copied().chain([2])).collect();
    let mut out = Vec::new();
    for (name, prefixes) in GROUPS {
        let tensors: Vec<_> = p.layout.tensors.iter().filter(|t| prefixes.iter().any(|pre| t.name.starts_with(pre))).collect();
        assert!(!tensors.is_empty(), "{name}");
        let mut worst = 0.0f64;
        for _ in 0..per_group {
            let t = tensors[rng.gen_range(0..tensors.len())];
            let idx = match t.name.as_str() {
                "src_tok_emb" => {
                    let row = used_src[rng.gen_range(0..used_src.len())] as usize;
                    t.offset + row * t.shape[1] + rng.gen_range(0..t.shape[1])
                }
                "tgt_tok_emb" => {
                    let row = used_tgt[rng.gen_range(0..used_tgt.len())] as usize;
                    t.offset + row * t.shape[1] + rng.gen_range(0..t.shape[1])
                }
                _ => t.offset + rng.gen_range(0..t.len()),
            };
            let h = 1e-5;
            let mut q = p.clone();
            q.data[idx] += h;
            let up = batch_loss(&q, &b).unwrap().loss;
            q.data[idx] -= 2.0 * h;
            let down = batch_loss(&q, &b).unwrap().loss;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad[idx];
            // One ulp of the loss over 2h is ~4e-11, so gradients that are
            // exactly zero (e.g. key biases, by softmax shift invariance)
            // need an absolute floor in the denominator.
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((*name, worst));
    }
    out
}

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "te", "su", "ra", "vo", "ne", "pi", "du", "ha", "jo"];

/// 32 random source sentences; targets reverse the word order and mark
/// every word with a suffix.
pub fn memorization_corpus() -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let word = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.gen_range(1..=3)).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect()
    };
    (0..32)
        .map(|_| {
            let words: Vec<String> = (0..rng.gen_range(3..=7)).map(|_| word(&mut rng)).collect();
            let tgt: Vec<String> = words.iter().rev().map(|w| format!("{w}q")).collect();
            (words.join(" "), tgt.join(" "))
        })
        .collect()
}

pub struct Memorization {
    pub valid_ppl: f64,
    pub train_bleu: f64,
    pub updates: u64,
    pub elapsed: Duration,
    /// Up to three (hypothesis, reference) pairs that differ.
    pub mismatches: Vec<(String, String)>,
}

/// Trains a small model on the 32 pairs (valid = train, no label smoothing)
/// and decodes the training sources greedily.
pub fn memorize() -> Memorization {
    let clock = Instant::now();
    let pairs = memorization_corpus();
    let texts: Vec<&str> = pairs.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]).collect();
    let sw = SubwordModel::train(&texts, 400, 0).unwrap();
    let cfg = ModelConfig {
        enc_layers: 2,
        dec_layers: 2,
        heads: 4,
        d_model: 64,
        d_ff: 128,
        token_vocab: sw.vocab_size(),
        factor_vocab: 2,
        factor_dim: 8,
        dropout: 0.0,
        label_smoothing: 0.0,
        max_len: 64,
    };
    let examples: Vec<Example> = pairs.iter().map(|(s, t)| Example::encode(&sw, s, t, 1)).collect();
    let langs = vec![lang("src"), lang("tgt")];
    let init = Checkpoint::new(Params::init(&cfg, 7).unwrap(), langs.clone()).unwrap();
    let tc = TrainConfig {
        batch_words: 64,
        checkpoint_interval: 25,
        patience: 4,
        max_updates: 3000,
        lr: 3e-3,
        warmup: 100,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&init, &examples, &examples, &tc, None).unwrap();
    let valid_ppl = out.best.valid_ppl;
    assert_eq!(evaluate_perplexity(&out.best.params, &examples).unwrap(), valid_ppl);
    let tr = Translator::new(&out.best.params, &sw, &langs);
    let items: Vec<(&str, &lrmt::LangId)> = pairs.iter().map(|(s, _)| (s.as_str(), &langs[1])).collect();
    let hyps: Vec<String> =
        tr.translate_batch(&items, &DecodeSettings::greedy()).unwrap().into_iter().map(|t| t.text).collect();
    let refs: Vec<&str> = pairs.iter().map(|(_, t)| t.as_str()).collect();
    let train_bleu = bleu(&hyps, &refs).unwrap().score;
    let mismatches =
        hyps.iter().zip(&refs).filter(|(h, r)| h != r).take(3).map(|(h, r)| (h.clone(), r.to_string())).collect();
    Memorization { valid_ppl, train_bleu, updates: out.updates, elapsed: clock.elapsed(), mismatches }
}
