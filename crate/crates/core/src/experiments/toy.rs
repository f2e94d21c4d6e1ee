//! Synthetic related languages for self-contained experiment runs.
//!
//! A proto vocabulary of random roots is split into nouns, verbs and
//! adjectives. Each toy language derives its roots from a parent (or the
//! proto vocabulary) through ordered sound-change rewrites plus a fraction of
//! wholesale word replacements, and marks every word with a class suffix.
//! Sentences are generated once as concept sequences and rendered in each
//! language word by word, so every reference translation is exact.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    save_mono, save_parallel, CorpusManifest, Direction, LangId, MonoCorpus, MonoEntry, PairEntry, PairRole,
    ParallelCorpus,
};
use crate::error::{Error, Result};

const CONSONANTS: &[&str] = &["p", "t", "k", "m", "n", "l", "s", "r", "v", "j", "h"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum WordClass {
    Noun,
    Verb,
    Adj,
}

fn class_of(concept: usize) -> WordClass {
    match concept % 4 {
        0 | 1 => WordClass::Noun,
        2 => WordClass::Verb,
        _ => WordClass::Adj,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyLanguage {
    pub code: LangId,
    /// Language the roots are inherited from; `None` means the proto vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<LangId>,
    /// Fraction of inherited roots replaced by fresh random words.
    #[serde(default)]
    pub replace: f64,
    /// `(from, to)` rewrites applied in order to every inherited root.
    #[serde(default)]
    pub sound_changes: Vec<(String, String)>,
    /// Noun, verb and adjective suffixes; inherited from the parent when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffixes: Option<[String; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyPair {
    pub src: LangId,
    pub tgt: LangId,
    pub role: PairRole,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyLanguageSpec {
    /// Number of proto concepts.
    pub base_vocab: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Parents must be listed before their children.
    pub languages: Vec<ToyLanguage>,
    pub pairs: Vec<ToyPair>,
    /// Lines in each monolingual set, per language.
    pub mono_sets: Vec<usize>,
}

fn tl(code: &str, parent: Option<&str>, replace: f64, changes: &[(&str, &str)], suffixes: [&str; 3]) -> ToyLanguage {
    ToyLanguage {
        code: LangId::new(code).unwrap(),
        parent: parent.map(|p| LangId::new(p).unwrap()),
        replace,
        sound_changes: changes.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        suffixes: Some(suffixes.map(String::from)),
    }
}

fn tp(src: &str, tgt: &str, role: PairRole, train: usize, valid: usize, test: usize) -> ToyPair {
    ToyPair { src: LangId::new(src).unwrap(), tgt: LangId::new(tgt).unwrap(), role, train, valid, test }
}

impl ToyLanguageSpec {
    /// Reads a spec in the `toy_spec.toml` format written by [`generate_toy_suite`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: ToyLanguageSpec = toml::from_str(&text).map_err(|e| Error::format("toy spec", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("toy spec serializes")
    }

    /// Five languages named after the Uralic set: `et` and `fi` descend
    /// from the proto vocabulary, `vro` from `et`, `sme` from `fi` with heavy
    /// replacement, and `sma` from `sme`. Rewrites only introduce letters
    /// absent from the proto alphabet and every suffix carries such a
    /// letter, so the word forms are distinct for any seed. One high-resource
    /// pair of 1 500 sentences, four low-resource pairs of 120 to 250, the
    /// zero-resource pair `vro-sme`, 400 + 200 monolingual lines per language.
    pub fn grid_preset() -> Self {
        let mut s = Self::with_sizes(200, [1500, 150, 250, 150, 120], 50, 400);
        s.max_words = 6;
        s
    }

    /// Larger sizes: 20 000 high-resource pairs, 500 to 2 000 low-resource
    /// pairs and 5 000 monolingual lines per language.
    pub fn desk_preset() -> Self {
        Self::with_sizes(1000, [20_000, 2000, 1000, 800, 500], 200, 5000)
    }

    /// `train` lists et-fi, et-vro, fi-sme, fi-sma, sme-sma sizes.
    pub fn with_sizes(base_vocab: usize, train: [usize; 5], test: usize, mono: usize) -> Self {
        use PairRole::*;
        let valid = test;
        ToyLanguageSpec {
            base_vocab,
            min_words: 3,
            max_words: 7,
            languages: vec![
                tl("et", None, 0.0, &[("k", "g")], ["", "b", "ed"]),
                tl("fi", None, 0.05, &[("o", "ö")], ["", "ä", "y"]),
                tl("vro", Some("et"), 0.1, &[("a", "õ")], ["q", "bõ", "dü"]),
                tl("sme", Some("fi"), 0.3, &[("p", "b"), ("t", "đ")], ["aš", "á", "až"]),
                tl("sma", Some("sme"), 0.2, &[("đ", "d"), ("ö", "oe")], ["ë", "ëh", "ës"]),
            ],
            pairs: vec![
                tp("et", "fi", High, train[0], valid, test),
                tp("et", "vro", Low, train[1], valid, test),
                tp("fi", "sme", Low, train[2], valid, test),
                tp("fi", "sma", Low, train[3], valid, test),
                tp("sme", "sma", Low, train[4], valid, test),
                tp("vro", "sme", Zero, 0, valid, test),
            ],
            mono_sets: vec![mono, mono / 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.base_vocab < 8 {
            return bad(format!("base_vocab {} is below the minimum of 8", self.base_vocab));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad(format!("sentence length range {}..={} is empty", self.min_words, self.max_words));
        }
        let mut seen = HashSet::new();
        for l in &self.languages {
            if let Some(p) = &l.parent {
                if !seen.contains(p) {
                    return bad(format!("{} derives from {p}, which is not declared before it", l.code));
                }
            } else if l.suffixes.is_none() {
                return bad(format!("{} has no parent and no suffixes", l.code));
            }
            if !(0.0..=1.0).contains(&l.replace) {
                return bad(format!("{}: replace fraction {} outside [0, 1]", l.code, l.replace));
            }
            if l.sound_changes.iter().any(|(a, _)| a.is_empty()) {
                return bad(format!("{}: empty sound-change pattern", l.code));
            }
            let texts = l.sound_changes.iter().map(|(_, b)| b).chain(l.suffixes.iter().flatten());
            for t in texts {
                if t.chars().any(char::is_whitespace) {
                    return bad(format!("{}: rewrite or suffix `{t}` contains whitespace", l.code));
                }
            }
            if !seen.insert(l.code.clone()) {
                return bad(format!("language {} declared twice", l.code));
            }
        }
        let mut pairs = HashSet::new();
        for p in &self.pairs {
            let d = Direction::new(p.src.clone(), p.tgt.clone()).map_err(|e| Error::Spec(e.to_string()))?;
            if !seen.contains(&p.src) || !seen.contains(&p.tgt) {
                return bad(format!("pair {d} uses an undeclared language"));
            }
            if !pairs.insert(d.unordered()) {
                return bad(format!("pair {d} declared twice"));
            }
            if (p.role == PairRole::Zero) != (p.train == 0) {
                return bad(format!("pair {d}: exactly the zero-resource pairs must have no training data"));
            }
            if p.valid == 0 || p.test == 0 {
                return bad(format!("pair {d} needs validation and test sentences"));
            }
        }
        Ok(())
    }

    pub fn language_ids(&self) -> Vec<LangId> {
        let mut v: Vec<LangId> = self.languages.iter().map(|l| l.code.clone()).collect();
        v.sort();
        v
    }
}

/// Per-language surface form of every concept.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub forms: BTreeMap<LangId, Vec<String>>,
}

fn random_root(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
        s.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    if rng.gen_bool(0.3) {
        s.push_str(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
    }
    s
}

fn lang_rng(seed: u64, code: &LangId) -> ChaCha8Rng {
    let h = code.as_str().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Derives every language's word forms and checks that each language maps
/// distinct concepts to distinct words.
pub fn build_lexicon(spec: &ToyLanguageSpec, seed: u64) -> Result<Lexicon> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut proto = Vec::with_capacity(spec.base_vocab);
    let mut used = HashSet::new();
    while proto.len() < spec.base_vocab {
        let r = random_root(&mut rng);
        if used.insert(r.clone()) {
            proto.push(r);
        }
    }
    let mut roots: HashMap<LangId, Vec<String>> = HashMap::new();
    let mut suffixes: HashMap<LangId, [String; 3]> = HashMap::new();
    let mut forms = BTreeMap::new();
    for l in &spec.languages {
        let mut rng = lang_rng(seed, &l.code);
        let inherited = match &l.parent {
            Some(p) => &roots[p],
            None => &proto,
        };
        let replaced: Vec<bool> = inherited.iter().map(|_| rng.gen_bool(l.replace)).collect();
        let mut mine: Vec<String> = inherited
            .iter()
            .zip(&replaced)
            .map(|(r, &rep)| {
                if rep {
                    String::new()
                } else {
                    l.sound_changes.iter().fold(r.clone(), |w, (a, b)| w.replace(a.as_str(), b))
                }
            })
            .collect();
        // fresh words never coincide with a root the language already has
        let mut taken: HashSet<String> = mine.iter().filter(|r| !r.is_empty()).cloned().collect();
        for (r, _) in mine.iter_mut().zip(&replaced).filter(|(_, &rep)| rep) {
            loop {
                let cand = random_root(&mut rng);
                if taken.insert(cand.clone()) {
                    *r = cand;
                    break;
                }
            }
        }
        let suf = match (&l.suffixes, &l.parent) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => suffixes[p].clone(),
            (None, None) => unreachable!("validated"),
        };
        let surface: Vec<String> = mine
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = match class_of(i) {
                    WordClass::Noun => &suf[0],
                    WordClass::Verb => &suf[1],
                    WordClass::Adj => &suf[2],
                };
                format!("{r}{s}")
            })
            .collect();
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (i, w) in surface.iter().enumerate() {
            if w.is_empty() {
                return Err(Error::Spec(format!("{}: concept {i} has an empty word form", l.code)));
            }
            if let Some(j) = owner.insert(w, i) {
                return Err(Error::Spec(format!(
                    "{}: cipher is not bijective, concepts {j} and {i} both become `{w}`",
                    l.code
                )));
            }
        }
        roots.insert(l.code.clone(), mine);
        suffixes.insert(l.code.clone(), suf);
        forms.insert(l.code.clone(), surface);
    }
    Ok(Lexicon { forms })
}

impl Lexicon {
    pub fn render(&self, lang: &LangId, concepts: &[u32]) -> String {
        let f = &self.forms[lang];
        concepts.iter().map(|&c| f[c as usize].as_str()).collect::<Vec<_>>().join(" ")
    }
}

struct SentenceSource {
    rng: ChaCha8Rng,
    by_class: [(Vec<u32>, WeightedIndex<f64>); 3],
    seen: HashSet<Vec<u32>>,
    min: usize,
    max: usize,
}

impl SentenceSource {
    fn new(spec: &ToyLanguageSpec, seed: u64) -> Self {
        let pick = |c: WordClass| {
            let ids: Vec<u32> = (0..spec.base_vocab).filter(|&i| class_of(i) == c).map(|i| i as u32).collect();
            // Zipf-like frequencies within each class
            let w = WeightedIndex::new((0..ids.len()).map(|r| 1.0 / (r as f64 + 1.0))).unwrap();
            (ids, w)
        };
        SentenceSource {
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x70_79)),
            by_class: [pick(WordClass::Noun), pick(WordClass::Verb), pick(WordClass::Adj)],
            seen: HashSet::new(),
            min: spec.min_words,
            max: spec.max_words,
        }
    }

    fn draw(&mut self, c: WordClass) -> u32 {
        let (ids, w) = &self.by_class[c as usize];
        ids[w.sample(&mut self.rng)]
    }

    fn noun_phrase(&mut self, out: &mut Vec<u32>) {
        if self.rng.gen_bool(0.4) {
            out.push(self.draw(WordClass::Adj));
        }
        out.push(self.draw(WordClass::Noun));
    }

    /// A concept sequence never produced before: NP V NP*, cut to length.
    fn next(&mut self) -> Result<Vec<u32>> {
        for _ in 0..10_000 {
            let k = self.rng.gen_range(self.min..=self.max);
            let mut s = Vec::with_capacity(k + 1);
            self.noun_phrase(&mut s);
            s.push(self.draw(WordClass::Verb));
            while s.len() < k {
                self.noun_phrase(&mut s);
            }
            s.truncate(k);
            if self.seen.insert(s.clone()) {
                return Ok(s);
            }
        }
        Err(Error::Spec("vocabulary too small for the requested number of distinct sentences".into()))
    }
}

/// Everything a toy suite consists of, before it is written to disk.
#[derive(Debug, Clone)]
pub struct ToySuite {
    pub languages: Vec<LangId>,
    /// Per declared pair: (entry, train, valid, test).
    pub pairs: Vec<(ToyPair, ParallelCorpus, ParallelCorpus, ParallelCorpus)>,
    pub mono: BTreeMap<LangId, Vec<MonoCorpus>>,
    pub lexicon: Lexicon,
}

/// Generates all corpora in memory. Every concept sequence is used at most
/// once across the whole suite, so held-out sentences never appear in
/// training or monolingual data.
pub fn generate_suite(spec: &ToyLanguageSpec, seed: u64) -> Result<ToySuite> {
    let lexicon = build_lexicon(spec, seed)?;
    let mut src = SentenceSource::new(spec, seed);
    let mut pairs = Vec::new();
    for p in &spec.pairs {
        let d = Direction::new(p.src.clone(), p.tgt.clone())?;
        let mut make = |n: usize| -> Result<ParallelCorpus> {
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                let s = src.next()?;
                rows.push((lexicon.render(&p.src, &s), lexicon.render(&p.tgt, &s)));
            }
            Ok(ParallelCorpus::from_pairs(d.clone(), rows))
        };
        let test = make(p.test)?;
        let valid = make(p.valid)?;
        let train = make(p.train)?;
        pairs.push((p.clone(), train, valid, test));
    }
    let mut mono = BTreeMap::new();
    for l in &spec.languages {
        let mut sets = Vec::new();
        for &n in &spec.mono_sets {
            let mut lines = Vec::with_capacity(n);
            for _ in 0..n {
                lines.push(lexicon.render(&l.code, &src.next()?));
            }
            sets.push(MonoCorpus::new(l.code.clone(), lines));
        }
        mono.insert(l.code.clone(), sets);
    }
    Ok(ToySuite { languages: spec.language_ids(), pairs, mono, lexicon })
}

/// Writes a generated suite under `dir` and returns its manifest
/// (also saved as `dir/manifest.toml`). A zero-resource pair gets only
/// valid and test files.
pub fn generate_toy_suite(spec: &ToyLanguageSpec, seed: u64, dir: &Path) -> Result<CorpusManifest> {
    let suite = generate_suite(spec, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = CorpusManifest {
        languages: suite.languages.clone(),
        pairs: Vec::new(),
        mono: Vec::new(),
        lexicons: BTreeMap::new(),
        base_dir: dir.to_path_buf(),
    };
    for (p, train, valid, test) in &suite.pairs {
        let d = train.direction.clone();
        let mut e = PairEntry::new(p.src.clone(), p.tgt.clone(), p.role);
        let rel = |split: &str, l: &LangId| Path::new("parallel").join(d.to_string()).join(format!("{split}.{l}"));
        let write = |split: &str, c: &ParallelCorpus| -> Result<(std::path::PathBuf, std::path::PathBuf)> {
            let (s, t) = (rel(split, &d.src), rel(split, &d.tgt));
            save_parallel(dir.join(&s), dir.join(&t), c)?;
            Ok((s, t))
        };
        if p.role != PairRole::Zero {
            let (s, t) = write("train", train)?;
            e.train_src = Some(s);
            e.train_tgt = Some(t);
        }
        let (s, t) = write("valid", valid)?;
        e.valid_src = Some(s);
        e.valid_tgt = Some(t);
        let (s, t) = write("test", test)?;
        e.test_src = Some(s);
        e.test_tgt = Some(t);
        manifest.pairs.push(e);
    }
    for (l, sets) in &suite.mono {
        let mut paths = Vec::new();
        for (i, m) in sets.iter().enumerate() {
            let rel = Path::new("mono").join(l.as_str()).join(format!("set{}.txt", i + 1));
            save_mono(dir.join(&rel), m)?;
            paths.push(rel);
        }
        manifest.mono.push(MonoEntry { lang: l.clone(), sets: paths });
    }
    for (l, forms) in &suite.lexicon.forms {
        let rel = Path::new("lexicon").join(format!("{l}.txt"));
        let mut sorted = forms.clone();
        sorted.sort();
        save_mono(dir.join(&rel), &MonoCorpus::new(l.clone(), sorted))?;
        manifest.lexicons.insert(l.clone(), rel);
    }
    let spec_path = dir.join("toy_spec.toml");
    let text = spec.to_toml();
    fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    manifest.save(dir.join("manifest.toml"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{lang, SplitName};
    use crate::metrics::bleu;

    fn small() -> ToyLanguageSpec {
        ToyLanguageSpec::with_sizes(60, [40, 10, 10, 10, 10], 5, 12)
    }

    #[test]
    fn preset_lexicons_are_bijective() {
        build_lexicon(&ToyLanguageSpec::grid_preset(), 1).unwrap();
        build_lexicon(&ToyLanguageSpec::desk_preset(), 1).unwrap();
    }

    #[test]
    fn sizes_match_and_zero_pair_has_no_train_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small();
        generate_toy_suite(&spec, 3, dir.path()).unwrap();
        let m = CorpusManifest::load(dir.path().join("manifest.toml")).unwrap();
        for (p, e) in spec.pairs.iter().zip(&m.pairs) {
            assert_eq!(m.load_pair(e, SplitName::Train).unwrap().len(), p.train);
            assert_eq!(m.load_pair(e, SplitName::Valid).unwrap().len(), p.valid);
            assert_eq!(m.load_pair(e, SplitName::Test).unwrap().len(), p.test);
            assert_eq!(e.train_src.is_none(), p.role == PairRole::Zero);
        }
        let zero = m.pairs_with_role(PairRole::Zero).next().unwrap();
        let zdir = dir.path().join("parallel").join(zero.direction().to_string());
        let mut names: Vec<String> =
            fs::read_dir(zdir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["test.sme", "test.vro", "valid.sme", "valid.vro"]);
        assert_eq!(m.load_mono_set(&lang("sma"), 1).unwrap().len(), 6);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_suite(&small(), 9).unwrap();
        let b = generate_suite(&small(), 9).unwrap();
        let c = generate_suite(&small(), 10).unwrap();
        assert_eq!(a.pairs[0].1, b.pairs[0].1);
        assert_eq!(a.mono, b.mono);
        assert_ne!(a.pairs[0].1, c.pairs[0].1);
    }

    #[test]
    fn identity_cipher_gives_perfect_bleu() {
        let mut spec = small();
        spec.languages.push(ToyLanguage {
            code: lang("etx"),
            parent: Some(lang("et")),
            replace: 0.0,
            sound_changes: vec![],
            suffixes: None,
        });
        spec.pairs = vec![ToyPair { src: lang("et"), tgt: lang("etx"), role: PairRole::Low, train: 5, valid: 5, test: 20 }];
        let suite = generate_suite(&spec, 4).unwrap();
        let test = &suite.pairs[0].3;
        let hyps: Vec<&str> = test.sources().collect();
        let refs: Vec<&str> = test.targets().collect();
        assert_eq!(bleu(&hyps, &refs).unwrap().score, 100.0);
    }

    #[test]
    fn colliding_sound_change_is_a_spec_error() {
        let mut spec = small();
        // collapse every consonant and vowel to one letter: all roots of a length coincide
        let mut changes: Vec<(String, String)> = CONSONANTS.iter().map(|c| (c.to_string(), "p".into())).collect();
        changes.extend(VOWELS.iter().map(|v| (v.to_string(), "a".into())));
        spec.languages[2].sound_changes = changes;
        assert!(matches!(build_lexicon(&spec, 1), Err(Error::Spec(m)) if m.contains("bijective")));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small();
        s.pairs[1].train = 0;
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
        let mut s = small();
        s.languages.swap(0, 2);
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
        let mut s = small();
        s.languages[0].replace = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn held_out_sentences_are_unique_across_the_suite() {
        let suite = generate_suite(&small(), 5).unwrap();
        let et: HashSet<&str> = suite
            .pairs
            .iter()
            .filter(|(p, ..)| p.src == lang("et"))
            .flat_map(|(_, tr, va, te)| [tr, va, te].into_iter().flat_map(|c| c.sources()))
            .collect();
        let total: usize = suite.pairs.iter().filter(|(p, ..)| p.src == lang("et")).map(|(_, a, b, c)| a.len() + b.len() + c.len()).sum();
        assert_eq!(et.len(), total);
        for line in &suite.mono[&lang("et")][0].lines {
            assert!(!et.contains(line.as_str()));
        }
    }
}
