//! Back-translation and forward-translation of monolingual text with a
//! multilingual model, and merging with human parallel data.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_parallel, Direction, LangId, MonoCorpus, Origin, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::nmt::{Checkpoint, DecodeSettings, Translator};
use crate::subword::SubwordModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    /// Every other language gets ⌊n/k⌋ or ⌈n/k⌉ lines; the extra lines go to
    /// the first targets in language order.
    EqualShares,
    /// Each line's target drawn uniformly and independently.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharePlan {
    pub source: LangId,
    /// Target language of each monolingual line.
    pub assignments: Vec<LangId>,
    pub mode: ShareMode,
    pub seed: u64,
}

impl SharePlan {
    pub fn counts(&self) -> BTreeMap<LangId, usize> {
        let mut m = BTreeMap::new();
        for l in &self.assignments {
            *m.entry(l.clone()).or_default() += 1;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Assigns a target language to every line of `m`.
pub fn plan_shares(m: &MonoCorpus, languages: &[LangId], mode: ShareMode, seed: u64) -> Result<SharePlan> {
    let mut targets: Vec<LangId> = languages.iter().filter(|l| **l != m.lang).cloned().collect();
    targets.sort();
    targets.dedup();
    if languages.len() < 2 || targets.is_empty() {
        return Err(Error::config("share planning needs at least two languages"));
    }
    if !languages.contains(&m.lang) {
        return Err(Error::config(format!("monolingual language {} is not in the language set", m.lang)));
    }
    let n = m.lines.len();
    let k = targets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignments = match mode {
        ShareMode::EqualShares => {
            let mut a = Vec::with_capacity(n);
            for (i, t) in targets.iter().enumerate() {
                let count = n / k + usize::from(i < n % k);
                a.extend(std::iter::repeat(t.clone()).take(count));
            }
            a.shuffle(&mut rng);
            a
        }
        ShareMode::UniformRandom => (0..n).map(|_| targets[rng.gen_range(0..k)].clone()).collect(),
    };
    Ok(SharePlan { source: m.lang.clone(), assignments, mode, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Also emit forward-translation pairs from the same translations.
    pub forward: bool,
    pub decode: DecodeSettings,
    /// Fraction of failed lines above which generation aborts.
    pub max_failure_rate: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { forward: true, decode: DecodeSettings::greedy(), max_failure_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub corpora: Vec<ParallelCorpus>,
    /// Fingerprint of the checkpoint that produced the translations.
    pub generator_id: String,
    pub iteration: u32,
    pub mode: ShareMode,
    pub seed: u64,
    pub planned: usize,
    /// Lines whose translation came out empty.
    pub dropped_empty: usize,
    /// Lines that hit the length cap or failed to decode.
    pub failed: usize,
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.corpora.iter().map(ParallelCorpus::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> impl Iterator<Item = &SentencePair> {
        self.corpora.iter().flat_map(|c| c.pairs.iter())
    }

    /// Writes one aligned file pair per direction and origin, plus
    /// `provenance.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for c in &self.corpora {
            for (origin, tag) in [(Origin::BackTranslated, "bt"), (Origin::ForwardTranslated, "ft")] {
                let mut part = ParallelCorpus::new(c.direction.clone());
                part.pairs = c.pairs.iter().filter(|p| p.origin == origin).cloned().collect();
                if part.is_empty() {
                    continue;
                }
                let stem = format!("{tag}.{}", c.direction);
                save_parallel(dir.join(format!("{stem}.{}", c.direction.src)), dir.join(format!("{stem}.{}", c.direction.tgt)), &part)?;
            }
        }
        #[derive(Serialize)]
        struct Sidecar<'a> {
            generator_id: &'a str,
            iteration: u32,
            mode: ShareMode,
            seed: u64,
            planned: usize,
            dropped_empty: usize,
            failed: usize,
            counts: BTreeMap<String, usize>,
        }
        let side = Sidecar {
            generator_id: &self.generator_id,
            iteration: self.iteration,
            mode: self.mode,
            seed: self.seed,
            planned: self.planned,
            dropped_empty: self.dropped_empty,
            failed: self.failed,
            counts: self.corpora.iter().map(|c| (c.direction.to_string(), c.len())).collect(),
        };
        let path = dir.join("provenance.json");
        fs::write(&path, serde_json::to_string_pretty(&side).unwrap()).map_err(|e| Error::io(&path, e))
    }
}

fn clean_output(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Translates every planned line and pairs it with its source: a
/// back-translation pair (machine source, human target) and, when enabled,
/// a forward-translation pair (human source, machine target).
pub fn generate(
    model: &Checkpoint,
    subword: &SubwordModel,
    m: &MonoCorpus,
    plan: &SharePlan,
    cfg: &SynthesisConfig,
    iteration: u32,
) -> Result<SyntheticCorpus> {
    if plan.assignments.len() != m.lines.len() || plan.source != m.lang {
        return Err(Error::Input("share plan does not match the monolingual corpus".into()));
    }
    let tr = Translator::new(&model.params, subword, &model.languages);
    for t in plan.counts().keys() {
        tr.factor(t)?;
    }
    let items: Vec<(&str, &LangId)> = m.lines.iter().map(String::as_str).zip(&plan.assignments).collect();
    let outputs = tr.translate_batch(&items, &cfg.decode)?;
    let mut by_dir: BTreeMap<Direction, ParallelCorpus> = BTreeMap::new();
    let (mut failed, mut dropped_empty) = (0, 0);
    for ((line, tgt), out) in items.iter().zip(outputs) {
        if out.truncated {
            failed += 1;
            continue;
        }
        let y = clean_output(&out.text);
        if y.is_empty() {
            dropped_empty += 1;
            continue;
        }
        let bt_dir = Direction::new((*tgt).clone(), m.lang.clone())?;
        by_dir.entry(bt_dir.clone()).or_insert_with(|| ParallelCorpus::new(bt_dir.clone())).pairs.push(SentencePair {
            src_lang: bt_dir.src.clone(),
            tgt_lang: bt_dir.tgt.clone(),
            src: y.clone(),
            tgt: line.to_string(),
            origin: Origin::BackTranslated,
        });
        if cfg.forward {
            let ft_dir = bt_dir.reversed();
            by_dir.entry(ft_dir.clone()).or_insert_with(|| ParallelCorpus::new(ft_dir.clone())).pairs.push(SentencePair {
                src_lang: ft_dir.src.clone(),
                tgt_lang: ft_dir.tgt.clone(),
                src: line.to_string(),
                tgt: y,
                origin: Origin::ForwardTranslated,
            });
        }
    }
    let planned = plan.len();
    if planned > 0 && failed as f64 > cfg.max_failure_rate * planned as f64 {
        return Err(Error::Synthesis { failed, total: planned });
    }
    if failed > 0 {
        tracing::warn!(failed, planned, "synthetic lines skipped");
    }
    Ok(SyntheticCorpus {
        corpora: by_dir.into_values().collect(),
        generator_id: model.fingerprint(),
        iteration,
        mode: plan.mode,
        seed: plan.seed,
        planned,
        dropped_empty,
        failed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeCount {
    pub direction: String,
    pub human: usize,
    pub back_translated: usize,
    pub forward_translated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedSet {
    /// One corpus per direction, in direction order.
    pub corpora: Vec<ParallelCorpus>,
    pub counts: Vec<MergeCount>,
}

/// Concatenates human and synthetic pairs per direction (human first).
pub fn merge(human: &[ParallelCorpus], synthetic: &[&SyntheticCorpus]) -> MergedSet {
    let mut by_dir: BTreeMap<Direction, ParallelCorpus> = BTreeMap::new();
    let all = human.iter().chain(synthetic.iter().flat_map(|s| s.corpora.iter()));
    for c in all {
        by_dir
            .entry(c.direction.clone())
            .or_insert_with(|| ParallelCorpus::new(c.direction.clone()))
            .pairs
            .extend(c.pairs.iter().cloned());
    }
    let counts = by_dir
        .values()
        .map(|c| {
            let n = |o: Origin| c.pairs.iter().filter(|p| p.origin == o).count();
            MergeCount {
                direction: c.direction.to_string(),
                human: n(Origin::Human),
                back_translated: n(Origin::BackTranslated),
                forward_translated: n(Origin::ForwardTranslated),
            }
        })
        .collect();
    MergedSet { corpora: by_dir.into_values().collect(), counts }
}

/// Monolingual input of the second iteration: the first set reshuffled
/// under `seed`, followed by the second set.
pub fn second_iteration_input(first: &MonoCorpus, second: &MonoCorpus, seed: u64) -> Result<MonoCorpus> {
    if first.lang != second.lang {
        return Err(Error::Input(format!("monolingual sets in {} and {}", first.lang, second.lang)));
    }
    let mut lines = first.lines.clone();
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    lines.extend(second.lines.iter().cloned());
    Ok(MonoCorpus::new(first.lang.clone(), lines))
}

/// Second synthesis round: re-plans shares over the reshuffled first set
/// plus the second set and translates with the newest (+BT1) model.
#[allow(clippy::too_many_arguments)]
pub fn iterate(
    generator: Option<&Checkpoint>,
    subword: &SubwordModel,
    mono: &[(MonoCorpus, MonoCorpus)],
    languages: &[LangId],
    mode: ShareMode,
    seed: u64,
    cfg: &SynthesisConfig,
) -> Result<Vec<SyntheticCorpus>> {
    let model = generator.ok_or_else(|| Error::State("iteration 2 needs the iteration-1 checkpoint".into()))?;
    mono.iter()
        .enumerate()
        .map(|(i, (first, second))| {
            let s = seed.wrapping_add(i as u64);
            let input = second_iteration_input(first, second, s)?;
            let plan = plan_shares(&input, languages, mode, s ^ 0x5eed)?;
            generate(model, subword, &input, &plan, cfg, 2)
        })
        .collect()
}

/// Synthetic pairs whose text coincides with a held-out sentence.
pub fn leaks(synthetic: &[&SyntheticCorpus], heldout: &[ParallelCorpus]) -> usize {
    let held: HashSet<&str> = heldout.iter().flat_map(|c| c.pairs.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()])).collect();
    synthetic
        .iter()
        .flat_map(|s| s.pairs())
        .filter(|p| {
            let human = if p.origin == Origin::BackTranslated { &p.tgt } else { &p.src };
            held.contains(human.as_str())
        })
        .count()
}
