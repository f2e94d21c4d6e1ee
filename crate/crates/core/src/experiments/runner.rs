//! Executes an [`ExperimentSpec`] stage by stage, keeping a resumable
//! `state.json` in the output directory.
//!
//! Layout of the output directory:
//!
//! ```text
//! state.json              completed stages and their scores
//! subword.bpe             one shared subword model for every stage
//! stages/<slug>/<key>/    init.ckpt (step-0 parameters), best.ckpt,
//!                         latest.ckpt, index.json, train_log.tsv
//! synthetic/<slug>/       synthetic corpora (bt./ft. files, provenance.json)
//! report.tsv, report.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::langid::LanguageIdentifier;
use super::spec::{ExperimentSpec, Stage, BASELINES, MULTILINGUAL};
use super::toy::generate_toy_suite;
use crate::corpus::{
    build_multilingual, downsample, reverse, CorpusManifest, Direction, LangId, MonoCorpus, Origin, PairRole,
    ParallelCorpus, SentencePair, SplitName,
};
use crate::error::{Error, Result};
use crate::metrics::{format_fixed, ComparisonTable, ScoreReport};
use crate::metrics::{bleu, chrf};
use crate::nmt::{init_from, Checkpoint, Example, Params, Translator};
use crate::subword::SubwordModel;
use crate::synthesis::{generate, iterate, merge, plan_shares, SynthesisConfig, SyntheticCorpus};
use crate::trainer::{best_path, fine_tune, train};

/// Key under which a stage's single multilingual model is stored.
const MODEL_KEY: &str = "model";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Reuse stages already completed in the output directory.
    pub resume: bool,
    /// Stop after the stage with this label; the report then covers only
    /// the stages completed so far and is not written to disk.
    pub until: Option<String>,
}

/// Score of a single-direction stage (fine-tuning or transfer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleScore {
    pub label: String,
    pub direction: String,
    pub bleu: f64,
    pub chrf: f64,
}

/// A zero-resource direction decoded by a multilingual model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotScore {
    pub label: String,
    pub direction: String,
    pub bleu: f64,
    pub chrf: f64,
    /// Fraction of outputs identified as the requested language, when the
    /// manifest provides lexicons.
    pub on_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StageResult {
    Row(ScoreReport),
    Single(SingleScore),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub label: String,
    /// Best checkpoint per key (`model` or a direction), relative to the output directory.
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub fingerprints: BTreeMap<String, String>,
    /// Checkpoint the stage started from, when not random.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    /// Synthetic corpora the stage trained on.
    #[serde(default)]
    pub synthetic: Vec<PathBuf>,
    pub result: StageResult,
    #[serde(default)]
    pub zero_shot: Vec<ZeroShotScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub spec_hash: String,
    pub subword: Option<String>,
    pub stages: Vec<StageRecord>,
}

/// Everything written to `report.tsv` / `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub table: ComparisonTable,
    pub single: Vec<SingleScore>,
    /// BLEU of the bilingual baseline for each single-direction stage's direction.
    pub single_baselines: Vec<Option<f64>>,
    pub zero_shot: Vec<ZeroShotScore>,
}

impl ExperimentReport {
    pub fn row(&self, label: &str) -> Option<&ScoreReport> {
        self.table.reports.iter().find(|r| r.label == label)
    }

    pub fn single(&self, label: &str) -> Option<&SingleScore> {
        self.single.iter().find(|s| s.label == label)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.table.to_tsv();
        for (x, base) in self.single.iter().zip(&self.single_baselines) {
            let _ = writeln!(
                s,
                "single\t{}\t{}\t{}\t{}\tbaseline\t{}",
                x.label,
                x.direction,
                format_fixed(x.bleu, 1),
                format_fixed(x.chrf, 3),
                base.map_or("-".into(), |b| format_fixed(b, 1))
            );
        }
        for z in &self.zero_shot {
            let _ = writeln!(
                s,
                "zero_shot\t{}\t{}\t{}\t{}\ton_target\t{}",
                z.label,
                z.direction,
                format_fixed(z.bleu, 1),
                format_fixed(z.chrf, 3),
                z.on_target.map_or("-".into(), |r| format_fixed(r, 3))
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Loaded corpora shared by every stage.
struct Data {
    languages: Vec<LangId>,
    /// Per non-zero pair in manifest order: (role, train, valid, test), declared direction.
    pairs: Vec<(PairRole, ParallelCorpus, ParallelCorpus, ParallelCorpus)>,
    /// Zero-resource pairs: (valid, test).
    zero: Vec<(ParallelCorpus, ParallelCorpus)>,
    /// Per language: monolingual sets, possibly down-sampled.
    mono: BTreeMap<LangId, Vec<MonoCorpus>>,
    langid: Option<LanguageIdentifier>,
}

impl Data {
    fn load(m: &CorpusManifest, limit: usize, seed: u64) -> Result<Self> {
        let mut languages = m.languages.clone();
        languages.sort();
        let mut pairs = Vec::new();
        let mut zero = Vec::new();
        for e in &m.pairs {
            let valid = m.load_pair(e, SplitName::Valid)?;
            let test = m.load_pair(e, SplitName::Test)?;
            if e.role == PairRole::Zero {
                zero.push((valid, test));
            } else {
                pairs.push((e.role, m.load_pair(e, SplitName::Train)?, valid, test));
            }
        }
        let mut mono = BTreeMap::new();
        for entry in &m.mono {
            let mut sets = Vec::new();
            for i in 0..entry.sets.len() {
                let set = m.load_mono_set(&entry.lang, i)?;
                sets.push(if limit > 0 { downsample(&set, limit, seed ^ i as u64) } else { set });
            }
            mono.insert(entry.lang.clone(), sets);
        }
        let langid = if m.languages.iter().all(|l| m.lexicons.contains_key(l)) {
            Some(LanguageIdentifier::from_manifest(m)?)
        } else {
            None
        };
        Ok(Data { languages, pairs, zero, mono, langid })
    }

    /// Table columns: each pair's declared direction followed by its reverse.
    fn columns(&self) -> Vec<Direction> {
        self.pairs.iter().flat_map(|(_, tr, ..)| [tr.direction.clone(), tr.direction.reversed()]).collect()
    }

    fn low_columns(&self) -> Vec<Direction> {
        self.pairs
            .iter()
            .filter(|(r, ..)| *r == PairRole::Low)
            .flat_map(|(_, tr, ..)| [tr.direction.clone(), tr.direction.reversed()])
            .collect()
    }

    /// The split of the pair covering `d`, oriented as `d`.
    fn oriented(&self, d: &Direction, pick: impl Fn(&(PairRole, ParallelCorpus, ParallelCorpus, ParallelCorpus)) -> &ParallelCorpus) -> Result<ParallelCorpus> {
        for p in &self.pairs {
            let c = pick(p);
            if c.direction == *d {
                return Ok(c.clone());
            }
            if c.direction.reversed() == *d {
                return Ok(reverse(c));
            }
        }
        Err(Error::config(format!("no parallel data for direction {d}")))
    }

    fn zero_tests(&self) -> Vec<ParallelCorpus> {
        self.zero.iter().flat_map(|(_, t)| [t.clone(), reverse(t)]).collect()
    }

    fn human_train(&self) -> Result<Vec<ParallelCorpus>> {
        build_multilingual(&self.pairs.iter().map(|(_, tr, ..)| tr.clone()).collect::<Vec<_>>())
    }

    fn human_valid(&self) -> Result<Vec<ParallelCorpus>> {
        build_multilingual(&self.pairs.iter().map(|(_, _, va, _)| va.clone()).collect::<Vec<_>>())
    }

    fn subword_texts(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for (_, tr, ..) in &self.pairs {
            v.extend(tr.pairs.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()]));
        }
        for sets in self.mono.values() {
            v.extend(sets.iter().flat_map(|s| s.lines.iter().map(String::as_str)));
        }
        v
    }
}

fn slug(label: &str) -> String {
    let mut s = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if c == '*' {
            // keeps `+ BT1` and `+ BT1(*)` apart
            s.push('x');
        } else if !s.ends_with('_') {
            s.push('_');
        }
    }
    let t = s.trim_matches('_');
    if t.is_empty() { "stage".into() } else { t.to_string() }
}

fn data_hash<'a>(pairs: impl Iterator<Item = &'a SentencePair>) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(format!("{}\t{}\t{}\t{}\n", p.src_lang, p.tgt_lang, p.src, p.tgt).as_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    out: PathBuf,
    data: Data,
    subword: SubwordModel,
    state: RunState,
    synth_cache: BTreeMap<PathBuf, Vec<SyntheticCorpus>>,
}

/// Prepares the data (generating the toy suite if configured and absent),
/// runs every stage not yet completed, and writes the report.
pub fn run(spec: &ExperimentSpec, out: &Path, opts: RunOptions) -> Result<ExperimentReport> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest_path = spec.manifest_path();
    if !manifest_path.exists() {
        match &spec.toy {
            Some(toy) => {
                let dir = manifest_path.parent().unwrap_or(Path::new("."));
                generate_toy_suite(toy, spec.seed, dir)?;
            }
            None => return Err(Error::config(format!("manifest {} does not exist", manifest_path.display()))),
        }
    }
    let manifest = CorpusManifest::load(&manifest_path)?;
    let data = Data::load(&manifest, spec.mono_limit, spec.seed)?;

    let state_path = out.join("state.json");
    let mut state = RunState { spec_hash: spec.hash(), subword: None, stages: Vec::new() };
    if state_path.exists() {
        let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let old: RunState = serde_json::from_str(&text).map_err(|e| Error::format("run state", e.to_string()))?;
        if !opts.resume {
            return Err(Error::State(format!("{} already holds a run; resume it or pick another directory", out.display())));
        }
        if old.spec_hash != state.spec_hash {
            return Err(Error::State(format!(
                "{} was produced by a different spec ({} vs {})",
                out.display(),
                old.spec_hash,
                state.spec_hash
            )));
        }
        state = old;
    }

    let sw_path = out.join("subword.bpe");
    let subword = match (&state.subword, sw_path.exists()) {
        (Some(fp), true) => {
            let sw = SubwordModel::load(&sw_path)?;
            if &sw.fingerprint() != fp {
                return Err(Error::State("subword model on disk does not match the run state".into()));
            }
            sw
        }
        _ => {
            let sw = SubwordModel::train(&data.subword_texts(), spec.vocab_size, spec.seed)?;
            sw.save(&sw_path)?;
            state.subword = Some(sw.fingerprint());
            sw
        }
    };

    let mut r = Runner { spec, out: out.to_path_buf(), data, subword, state, synth_cache: BTreeMap::new() };
    r.save_state()?;
    let mut slugs: Vec<String> = spec.stages.iter().map(|s| slug(&s.label())).collect();
    slugs.sort();
    if let Some(w) = slugs.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::config(format!("two stages share the directory name `{}`", w[0])));
    }
    if let Some(u) = &opts.until {
        if !spec.stages.iter().any(|s| &s.label() == u) {
            return Err(Error::config(format!("no stage labelled `{u}`")));
        }
    }
    let mut complete = true;
    for (i, stage) in spec.stages.iter().enumerate() {
        let label = stage.label();
        if i > 0 && opts.until.as_deref() == Some(spec.stages[i - 1].label().as_str()) {
            complete = false;
            break;
        }
        if let Some(done) = r.state.stages.get(i) {
            if done.label != label {
                return Err(Error::State(format!("state lists stage `{}` where the spec has `{label}`", done.label)));
            }
            tracing::info!(stage = %label, "reusing completed stage");
            continue;
        }
        tracing::info!(stage = %label, "running stage");
        let rec = r.run_stage(i, stage)?;
        r.state.stages.push(rec);
        r.save_state()?;
    }
    let report = r.report()?;
    if complete {
        write_atomic(&out.join("report.tsv"), &report.to_tsv())?;
        write_atomic(&out.join("report.json"), &report.to_json())?;
    }
    Ok(report)
}

/// Reads the state of a finished or partial run.
pub fn load_state(out: &Path) -> Result<RunState> {
    let p = out.join("state.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("run state", e.to_string()))
}

impl Runner<'_> {
    fn save_state(&self) -> Result<()> {
        write_atomic(&self.out.join("state.json"), &serde_json::to_string_pretty(&self.state).unwrap())
    }

    fn record(&self, label: &str) -> Result<&StageRecord> {
        self.state
            .stages
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::State(format!("stage `{label}` has not completed")))
    }

    fn checkpoint(&self, label: &str, key: &str) -> Result<Checkpoint> {
        let rec = self.record(label)?;
        let p = rec
            .checkpoints
            .get(key)
            .ok_or_else(|| Error::State(format!("stage `{label}` has no `{key}` model")))?;
        Checkpoint::load(self.out.join(p))
    }

    fn factor_of(&self, l: &LangId) -> u32 {
        self.data.languages.iter().position(|x| x == l).expect("declared language") as u32
    }

    fn examples<'c>(&self, corpora: impl IntoIterator<Item = &'c ParallelCorpus>) -> Vec<Example> {
        corpora
            .into_iter()
            .flat_map(|c| c.pairs.iter())
            .map(|p| Example::encode(&self.subword, &p.src, &p.tgt, self.factor_of(&p.tgt_lang)))
            .collect()
    }

    fn fresh(&self, stage: usize, key: &str, factored: bool) -> Result<Checkpoint> {
        let cfg = self.spec.model.config(self.subword.vocab_size(), self.data.languages.len(), factored);
        let key_seed = key.bytes().fold(stage as u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        let params = Params::init(&cfg, self.spec.seed.wrapping_mul(1_000_003).wrapping_add(key_seed))?;
        Checkpoint::new(params, self.data.languages.clone())
    }

    fn stage_dir(&self, label: &str, key: &str) -> PathBuf {
        Path::new("stages").join(slug(label)).join(key)
    }

    /// Trains one model and returns the relative path of its best checkpoint.
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &self,
        label: &str,
        key: &str,
        mut init: Checkpoint,
        parent: Option<&Checkpoint>,
        train_set: &[ParallelCorpus],
        valid: &[ParallelCorpus],
        continue_training: bool,
    ) -> Result<(PathBuf, Checkpoint)> {
        let rel = self.stage_dir(label, key);
        let dir = self.out.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        init.provenance.stage = label.to_string();
        init.provenance.parent = parent.map(Checkpoint::fingerprint);
        init.provenance.data_hash = data_hash(train_set.iter().flat_map(|c| c.pairs.iter()));
        init.provenance.subword = self.subword.fingerprint();
        init.step = 0;
        init.optimizer = None;
        init.ppl_history.clear();
        init.save(dir.join("init.ckpt"))?;
        let tr = self.examples(train_set);
        let va = self.examples(valid);
        let cfg = &self.spec.train;
        let out = if continue_training { fine_tune(&init, &tr, &va, cfg, Some(&dir))? } else { train(&init, &tr, &va, cfg, Some(&dir))? };
        // fine_tune may keep the starting point without ever saving it
        out.best.save(best_path(&dir))?;
        tracing::info!(stage = label, key, updates = out.updates, ppl = out.best.valid_ppl, "trained");
        Ok((rel.join("best.ckpt"), out.best))
    }

    fn translate(&self, model: &Checkpoint, tests: &[ParallelCorpus]) -> Result<Vec<Vec<String>>> {
        let tr = Translator::new(&model.params, &self.subword, &model.languages);
        let items: Vec<(&str, &LangId)> =
            tests.iter().flat_map(|c| c.pairs.iter().map(move |p| (p.src.as_str(), &c.direction.tgt))).collect();
        let mut outs = tr.translate_batch(&items, &self.spec.decode)?.into_iter().map(|t| t.text);
        Ok(tests.iter().map(|c| outs.by_ref().take(c.len()).collect()).collect())
    }

    fn test_set_name(&self) -> String {
        format!("{}.test", self.spec.name)
    }

    fn score_row(&self, label: &str, models: &dyn Fn(&Direction) -> Result<Checkpoint>, shared: bool) -> Result<ScoreReport> {
        let cols = self.data.columns();
        let tests: Vec<ParallelCorpus> = cols.iter().map(|d| self.data.oriented(d, |p| &p.3)).collect::<Result<_>>()?;
        let hyps = if shared {
            self.translate(&models(&cols[0])?, &tests)?
        } else {
            let mut v = Vec::new();
            for (d, t) in cols.iter().zip(&tests) {
                v.extend(self.translate(&models(d)?, std::slice::from_ref(t))?);
            }
            v
        };
        let mut report = ScoreReport::new(label, self.test_set_name());
        for ((d, t), h) in cols.iter().zip(&tests).zip(&hyps) {
            let refs: Vec<&str> = t.targets().collect();
            report.push(d, bleu(h, &refs)?.score, chrf(h, &refs)?);
        }
        let low = self.data.low_columns();
        if !low.is_empty() {
            report.aggregate(&low)?;
        }
        Ok(report)
    }

    fn zero_shot(&self, label: &str, model: &Checkpoint) -> Result<Vec<ZeroShotScore>> {
        let tests = self.data.zero_tests();
        let hyps = self.translate(model, &tests)?;
        let mut v = Vec::new();
        for (t, h) in tests.iter().zip(&hyps) {
            let refs: Vec<&str> = t.targets().collect();
            v.push(ZeroShotScore {
                label: label.to_string(),
                direction: t.direction.to_string(),
                bleu: bleu(h, &refs)?.score,
                chrf: chrf(h, &refs)?,
                on_target: self.data.langid.as_ref().map(|id| id.on_target_rate(h, &t.direction.tgt)),
            });
        }
        Ok(v)
    }

    fn multilingual_record(
        &self,
        label: &str,
        path: PathBuf,
        model: &Checkpoint,
        init: Option<PathBuf>,
        synthetic: Vec<PathBuf>,
    ) -> Result<StageRecord> {
        let row = self.score_row(label, &|_| Ok(model.clone()), true)?;
        Ok(StageRecord {
            label: label.to_string(),
            checkpoints: BTreeMap::from([(MODEL_KEY.to_string(), path)]),
            fingerprints: BTreeMap::from([(MODEL_KEY.to_string(), model.fingerprint())]),
            init,
            synthetic,
            result: StageResult::Row(row),
            zero_shot: self.zero_shot(label, model)?,
        })
    }

    fn run_stage(&mut self, index: usize, stage: &Stage) -> Result<StageRecord> {
        let label = stage.label();
        match stage {
            Stage::BilingualBaselines { .. } => {
                let mut checkpoints = BTreeMap::new();
                let mut fingerprints = BTreeMap::new();
                for d in self.data.columns() {
                    let key = d.to_string();
                    let tr = self.data.oriented(&d, |p| &p.1)?;
                    let va = self.data.oriented(&d, |p| &p.2)?;
                    let init = self.fresh(index, &key, false)?;
                    let (path, best) = self.fit(&label, &key, init, None, &[tr], &[va], false)?;
                    fingerprints.insert(key.clone(), best.fingerprint());
                    checkpoints.insert(key, path);
                }
                let out = self.out.clone();
                let row = self.score_row(&label, &|d| Checkpoint::load(out.join(&checkpoints[&d.to_string()])), false)?;
                Ok(StageRecord {
                    label,
                    checkpoints,
                    fingerprints,
                    init: None,
                    synthetic: Vec::new(),
                    result: StageResult::Row(row),
                    zero_shot: Vec::new(),
                })
            }
            Stage::MultilingualBaseline { .. } => {
                let init = self.fresh(index, MODEL_KEY, true)?;
                let (path, best) = self.fit(&label, MODEL_KEY, init, None, &self.data.human_train()?, &self.data.human_valid()?, false)?;
                self.multilingual_record(&label, path, &best, None, Vec::new())
            }
            Stage::BtIteration { n, mode, init_from: init_label, generator, forward, .. } => {
                let gen_label = match (generator, n) {
                    (Some(g), _) => g.clone(),
                    (None, 1) => MULTILINGUAL.to_string(),
                    (None, _) => self.latest_iteration_one()?,
                };
                let gen = self.checkpoint(&gen_label, MODEL_KEY)?;
                let mut synthetic = Vec::new();
                if *n == 2 {
                    // the batch the generator itself was trained on
                    let first = self
                        .record(&gen_label)?
                        .synthetic
                        .first()
                        .cloned()
                        .ok_or_else(|| Error::State(format!("generator `{gen_label}` was not trained on synthetic data")))?;
                    synthetic.push(first);
                }
                synthetic.push(self.synthesize(*n, &gen_label, &gen, *mode)?);
                let mut batches = Vec::new();
                for key in &synthetic {
                    for s in self.load_synthetic(key)? {
                        batches.push(if *forward { s } else { without_forward(s) });
                    }
                }
                let merged = merge(&self.data.human_train()?, &batches.iter().collect::<Vec<_>>());
                for c in &merged.counts {
                    tracing::info!(direction = %c.direction, human = c.human, bt = c.back_translated, ft = c.forward_translated, "training data");
                }
                let (init, parent, init_path) = match init_label {
                    Some(l) => {
                        let p = self.checkpoint(l, MODEL_KEY)?;
                        let mut c = p.clone();
                        c.params = init_from(&p.params, &p.params.cfg)?;
                        (c, Some(p), Some(self.stage_dir(&label, MODEL_KEY).join("init.ckpt")))
                    }
                    None => (self.fresh(index, MODEL_KEY, true)?, None, None),
                };
                let (path, best) =
                    self.fit(&label, MODEL_KEY, init, parent.as_ref(), &merged.corpora, &self.data.human_valid()?, false)?;
                self.multilingual_record(&label, path, &best, init_path, synthetic)
            }
            Stage::FineTune { direction, from, .. } => {
                let rec = self.record(from)?;
                let key = if rec.checkpoints.contains_key(MODEL_KEY) { MODEL_KEY.to_string() } else { direction.to_string() };
                let parent = self.checkpoint(from, &key)?;
                let tr = self.data.oriented(direction, |p| &p.1)?;
                let va = self.data.oriented(direction, |p| &p.2)?;
                let init = parent.clone();
                let dkey = direction.to_string();
                let (path, best) = self.fit(&label, &dkey, init, Some(&parent), &[tr], &[va], true)?;
                self.single_record(&label, direction, path, &best, Some(self.stage_dir(&label, &dkey).join("init.ckpt")))
            }
            Stage::Transfer { parent_pair, child_pair, .. } => {
                let parent = self.checkpoint(BASELINES, &parent_pair.to_string())?;
                let mut init = parent.clone();
                init.params = init_from(&parent.params, &parent.params.cfg)?;
                let tr = self.data.oriented(child_pair, |p| &p.1)?;
                let va = self.data.oriented(child_pair, |p| &p.2)?;
                let dkey = child_pair.to_string();
                let (path, best) = self.fit(&label, &dkey, init, Some(&parent), &[tr], &[va], false)?;
                self.single_record(&label, child_pair, path, &best, Some(self.stage_dir(&label, &dkey).join("init.ckpt")))
            }
        }
    }

    fn single_record(&self, label: &str, d: &Direction, path: PathBuf, model: &Checkpoint, init: Option<PathBuf>) -> Result<StageRecord> {
        let test = self.data.oriented(d, |p| &p.3)?;
        let hyps = self.translate(model, std::slice::from_ref(&test))?.remove(0);
        let refs: Vec<&str> = test.targets().collect();
        let key = d.to_string();
        Ok(StageRecord {
            label: label.to_string(),
            checkpoints: BTreeMap::from([(key.clone(), path)]),
            fingerprints: BTreeMap::from([(key, model.fingerprint())]),
            init,
            synthetic: Vec::new(),
            result: StageResult::Single(SingleScore {
                label: label.to_string(),
                direction: d.to_string(),
                bleu: bleu(&hyps, &refs)?.score,
                chrf: chrf(&hyps, &refs)?,
            }),
            zero_shot: Vec::new(),
        })
    }

    fn latest_iteration_one(&self) -> Result<String> {
        self.spec
            .stages
            .iter()
            .filter(|s| matches!(s, Stage::BtIteration { n: 1, .. }))
            .map(Stage::label)
            .filter(|l| self.record(l).is_ok())
            .last()
            .ok_or_else(|| Error::State("no completed iteration-1 stage".into()))
    }

    /// Generates (or reuses) the synthetic batch of iteration `n` produced by
    /// `gen_label`'s model; returns its directory relative to the output dir.
    fn synthesize(&mut self, n: u32, gen_label: &str, gen: &Checkpoint, mode: crate::synthesis::ShareMode) -> Result<PathBuf> {
        let mode_tag = serde_json::to_value(mode).unwrap().as_str().unwrap_or("mode").to_string();
        let rel = Path::new("synthetic").join(format!("it{n}_{}_{mode_tag}", slug(gen_label)));
        let dir = self.out.join(&rel);
        if self.synth_cache.contains_key(&rel) || dir.join("synthetic.json").exists() {
            return Ok(rel);
        }
        let cfg = SynthesisConfig { forward: true, decode: self.spec.decode.clone(), max_failure_rate: self.spec.max_synthesis_failure };
        let langs = self.data.languages.clone();
        let seed = self.spec.seed.wrapping_add(1000 * n as u64);
        let corpora = if n == 1 {
            let mut v = Vec::new();
            for (i, (_, sets)) in self.data.mono.iter().enumerate() {
                let first = sets.first().ok_or_else(|| Error::config("monolingual entry with no sets"))?;
                let plan = plan_shares(first, &langs, mode, seed.wrapping_add(i as u64))?;
                v.push(generate(gen, &self.subword, first, &plan, &cfg, 1)?);
            }
            v
        } else {
            let mut pairs = Vec::new();
            for sets in self.data.mono.values() {
                if sets.len() < 2 {
                    return Err(Error::config(format!("iteration 2 needs a second monolingual set for {}", sets[0].lang)));
                }
                pairs.push((sets[0].clone(), sets[1].clone()));
            }
            iterate(Some(gen), &self.subword, &pairs, &langs, mode, seed, &cfg)?
        };
        for (s, sets) in corpora.iter().zip(self.data.mono.keys()) {
            s.save(&dir.join(sets.as_str()))?;
        }
        write_atomic(&dir.join("synthetic.json"), &serde_json::to_string(&corpora).unwrap())?;
        self.synth_cache.insert(rel.clone(), corpora);
        Ok(rel)
    }

    fn load_synthetic(&self, rel: &Path) -> Result<Vec<SyntheticCorpus>> {
        if let Some(c) = self.synth_cache.get(rel) {
            return Ok(c.clone());
        }
        let p = self.out.join(rel).join("synthetic.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("synthetic corpus", e.to_string()))
    }

    fn report(&self) -> Result<ExperimentReport> {
        let mut rows = Vec::new();
        let mut single = Vec::new();
        let mut zero_shot = Vec::new();
        for s in &self.state.stages {
            match &s.result {
                StageResult::Row(r) => rows.push(r.clone()),
                StageResult::Single(x) => single.push(x.clone()),
            }
            zero_shot.extend(s.zero_shot.iter().cloned());
        }
        let baseline = rows.iter().find(|r| r.label == BASELINES);
        let single_baselines = single
            .iter()
            .map(|x: &SingleScore| baseline.and_then(|b| b.get(&x.direction)).map(|d| d.bleu))
            .collect();
        Ok(ExperimentReport {
            name: self.spec.name.clone(),
            table: ComparisonTable::build(&self.data.columns(), rows)?,
            single,
            single_baselines,
            zero_shot,
        })
    }
}

fn without_forward(mut s: SyntheticCorpus) -> SyntheticCorpus {
    for c in &mut s.corpora {
        c.pairs.retain(|p| p.origin != Origin::ForwardTranslated);
    }
    s.corpora.retain(|c| !c.is_empty());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("+ BT1 + BT2(*)"), "bt1_bt2_x");
        assert_eq!(slug("+ BT1 + BT2(**)"), "bt1_bt2_xx");
        assert_eq!(slug("+ BT1"), "bt1");
        assert_eq!(slug("Multilingual (ML)"), "multilingual_ml");
        assert_eq!(slug("..."), "stage");
    }
}
