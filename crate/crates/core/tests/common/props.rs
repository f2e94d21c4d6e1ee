//! Property checks run through a seeded proptest runner, so the same cases
//! are drawn on every run and the acceptance target can report each one.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use lrmt::corpus::{dedup, largest_remainder, normalize_text, reverse, split_holdout, Direction, SplitSpec};
use lrmt::corpus::{lang, LangId, MonoCorpus, Origin, ParallelCorpus, SentencePair};
use lrmt::synthesis::{plan_shares, ShareMode};
use lrmt::{Error, SubwordModel};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const CORPUS_CASES: u32 = 1000;
pub const ROUND_TRIP_CASES: u32 = 10_000;

pub fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn dir() -> Direction {
    Direction::new(lang("fi"), lang("sme")).unwrap()
}

/// Short texts over a few words, with stray spaces and one decomposed
/// character, so duplicates (exact and after normalization) are common.
fn text() -> impl Strategy<Value = String> {
    let word = prop::sample::select(vec!["a", "b", "õ", "o\u{303}", "sáme", "dál"]);
    (prop::collection::vec(word, 1..3), any::<bool>(), any::<bool>()).prop_map(|(w, lead, trail)| {
        format!("{}{}{}", if lead { " " } else { "" }, w.join(" "), if trail { " " } else { "" })
    })
}

fn origin() -> impl Strategy<Value = Origin> {
    prop::sample::select(vec![Origin::Human, Origin::BackTranslated, Origin::ForwardTranslated])
}

fn corpus() -> impl Strategy<Value = ParallelCorpus> {
    prop::collection::vec((text(), text(), origin()), 0..40).prop_map(|v| {
        let d = dir();
        let pairs = v
            .into_iter()
            .map(|(src, tgt, origin)| SentencePair { src_lang: d.src.clone(), tgt_lang: d.tgt.clone(), src, tgt, origin })
            .collect();
        ParallelCorpus { direction: d, pairs }
    })
}

fn key(p: &SentencePair) -> (String, String) {
    (normalize_text(&p.src), normalize_text(&p.tgt))
}

pub fn dedup_idempotent() -> Result<(), String> {
    check(CORPUS_CASES, corpus(), |c| {
        let (once, r1) = dedup(&c);
        let (twice, r2) = dedup(&once);
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(r2.eliminated, 0);
        prop_assert_eq!(r1.before, c.len());
        prop_assert_eq!(r1.after + r1.eliminated, r1.before);
        // first occurrences, in input order
        let mut seen = HashSet::new();
        let firsts: Vec<&SentencePair> = c.pairs.iter().filter(|p| seen.insert(key(p))).collect();
        prop_assert_eq!(firsts, once.pairs.iter().collect::<Vec<_>>());
        Ok(())
    })
}

pub fn reverse_involution() -> Result<(), String> {
    check(CORPUS_CASES, corpus(), |c| {
        let r = reverse(&c);
        prop_assert_eq!(&r.direction, &c.direction.reversed());
        for (a, b) in c.pairs.iter().zip(&r.pairs) {
            prop_assert_eq!((&a.src, &a.tgt, a.origin), (&b.tgt, &b.src, b.origin));
        }
        prop_assert_eq!(reverse(&r), c);
        Ok(())
    })
}

fn split_case() -> impl Strategy<Value = (Vec<usize>, usize, usize, u64)> {
    prop::collection::vec(1usize..150, 1..6).prop_flat_map(|sizes| {
        let total: usize = sizes.iter().sum();
        let hold = (0..total).prop_flat_map(|h| (Just(h), 0..=h));
        (Just(sizes), hold, any::<u64>()).prop_map(|(s, (h, t), seed)| (s, t, h - t, seed))
    })
}

pub fn split_partition_quota() -> Result<(), String> {
    check(CORPUS_CASES, split_case(), |(sizes, test_total, valid_total, seed)| {
        let langs = ["et", "fi", "vro", "sme", "sma", "xx"];
        let corpora: Vec<ParallelCorpus> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let d = Direction::new(lang(langs[i]), lang("yy")).unwrap();
                ParallelCorpus::from_pairs(d, (0..n).map(|j| (format!("s{j}"), format!("t{j}"))))
            })
            .collect();
        let spec = SplitSpec { test_total, valid_total, seed };
        let tq = largest_remainder(test_total, &sizes);
        let vq = largest_remainder(valid_total, &sizes);
        prop_assert_eq!(tq.iter().sum::<usize>(), test_total);
        prop_assert_eq!(vq.iter().sum::<usize>(), valid_total);
        let total: usize = sizes.iter().sum();
        for (i, &n) in sizes.iter().enumerate() {
            // floor or ceil of the exact proportional share
            for (q, want) in [(tq[i], test_total), (vq[i], valid_total)] {
                let exact = (want * n) as f64 / total as f64;
                prop_assert!((q as f64 - exact).abs() < 1.0, "quota {} vs share {}", q, exact);
            }
        }
        let overfull = sizes.iter().enumerate().any(|(i, &n)| tq[i] + vq[i] > n);
        let out = match split_holdout(&corpora, &spec) {
            Err(Error::Config(_)) if overfull => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
            Ok(out) => out,
        };
        prop_assert!(!overfull);
        for (i, (s, c)) in out.iter().zip(&corpora).enumerate() {
            prop_assert_eq!(s.test.len(), tq[i]);
            prop_assert_eq!(s.valid.len(), vq[i]);
            // every pair lands in exactly one split, each split keeps input order
            let pos = |p: &SentencePair| c.pairs.iter().position(|q| q == p).unwrap();
            let mut all = Vec::new();
            for part in [&s.train, &s.valid, &s.test] {
                let idx: Vec<usize> = part.pairs.iter().map(pos).collect();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                all.extend(idx);
            }
            all.sort_unstable();
            prop_assert_eq!(all, (0..c.len()).collect::<Vec<_>>());
        }
        prop_assert_eq!(split_holdout(&corpora, &spec).unwrap(), out);
        Ok(())
    })
}

pub fn equal_shares_balanced() -> Result<(), String> {
    let codes = ["et", "fi", "vro", "sme", "sma", "liv", "krl"];
    let case = (0usize..400, 2usize..=7, any::<u64>()).prop_flat_map(move |(n, k, seed)| (Just(n), Just(k), 0..k, Just(seed)));
    check(CORPUS_CASES, case, |(n, k, src, seed)| {
        let langs: Vec<LangId> = codes[..k].iter().map(|c| lang(c)).collect();
        let m = MonoCorpus::new(langs[src].clone(), (0..n).map(|i| i.to_string()).collect());
        let plan = plan_shares(&m, &langs, ShareMode::EqualShares, seed).unwrap();
        prop_assert_eq!(plan.len(), n);
        let counts: BTreeMap<LangId, usize> = plan.counts();
        prop_assert!(!counts.contains_key(&langs[src]));
        let per: Vec<usize> =
            langs.iter().filter(|l| **l != langs[src]).map(|l| counts.get(l).copied().unwrap_or(0)).collect();
        let (lo, hi) = (*per.iter().min().unwrap(), *per.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "shares {:?}", per);
        prop_assert_eq!(per.iter().sum::<usize>(), n);
        Ok(())
    })
}

pub fn bpe_model() -> &'static SubwordModel {
    static MODEL: OnceLock<SubwordModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let text = [
            "tere hommikust kuidas läheb",
            "hüvä hummogut kuis lätt",
            "buorre iđit mo manná",
            "hyvää huomenta mitä kuuluu",
            "boerë iedtjh guktie dov mænna",
            "the quick brown fox jumps over the lazy dog",
        ];
        let lines: Vec<String> = (0..20).flat_map(|i| text.iter().map(move |t| format!("{t} {i}"))).collect();
        SubwordModel::train(&lines, 500, 0).unwrap()
    })
}

fn fuzz_text() -> impl Strategy<Value = String> {
    prop_oneof![
        // anything, including characters the model never saw
        any::<String>(),
        // mostly-seen alphabet with whitespace runs and the marker itself
        "[a-zäõüšđæë \u{2581}\t\n]{0,60}",
        // rare scripts and emoji
        "[\u{0400}-\u{04ff}\u{4e00}-\u{4e40}\u{1f600}-\u{1f64f} a-z]{0,30}",
    ]
}

pub fn bpe_round_trip() -> Result<(), String> {
    let sw = bpe_model();
    check(ROUND_TRIP_CASES, fuzz_text(), |s| {
        let ids = sw.encode(&s);
        prop_assert!(ids.iter().all(|&i| (i as usize) < sw.vocab_size()));
        prop_assert_eq!(sw.decode(&ids).unwrap(), s);
        Ok(())
    })
}
