//! Byte-pair-encoding subword model shared by all languages.
//!
//! Text is pre-split into chunks at every space; each chunk starts with the
//! boundary marker `▁` (one extra space is prepended to the whole text and
//! removed again on decode, so any run of spaces survives a round trip).
//! Characters outside the learned alphabet, including a literal `▁`, are
//! encoded as UTF-8 byte tokens, so every string is representable.
//!
//! Ids: `0..4` specials, `4..260` the 256 byte tokens, then the alphabet
//! pieces (marker first), then merge outputs in the order they were learned.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_SPECIALS: u32 = 4;
const BYTE_BASE: u32 = NUM_SPECIALS;
pub const FIRST_PIECE: u32 = BYTE_BASE + 256;
pub const MARKER: char = '\u{2581}';
const SPECIAL_NAMES: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];
const FORMAT_HEADER: &str = "lrmt-bpe 1";

pub const DEFAULT_VOCAB_SIZE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Sym {
    Marker,
    Ch(char),
}

fn pretokenize(text: &str) -> Vec<Vec<Sym>> {
    if text.is_empty() {
        return Vec::new();
    }
    let mut chunks = vec![vec![Sym::Marker]];
    for c in text.chars() {
        if c == ' ' {
            chunks.push(vec![Sym::Marker]);
        } else {
            chunks.last_mut().unwrap().push(Sym::Ch(c));
        }
    }
    chunks
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordModel {
    /// Piece strings indexed by `id - FIRST_PIECE`.
    pieces: Vec<String>,
    /// Number of leading entries of `pieces` that are single-symbol alphabet pieces.
    alphabet_len: usize,
    piece_ids: HashMap<String, u32>,
    merges: Vec<(u32, u32)>,
    merge_out: Vec<u32>,
    ranks: HashMap<(u32, u32), usize>,
}

fn sym_piece(s: Sym) -> String {
    match s {
        Sym::Marker => MARKER.to_string(),
        Sym::Ch(c) => c.to_string(),
    }
}

impl SubwordModel {
    fn from_parts(alphabet: Vec<String>, merge_strings: &[(String, String)]) -> Result<Self> {
        let mut m = SubwordModel {
            pieces: Vec::new(),
            alphabet_len: alphabet.len(),
            piece_ids: HashMap::new(),
            merges: Vec::new(),
            merge_out: Vec::new(),
            ranks: HashMap::new(),
        };
        for p in alphabet {
            if p.chars().count() != 1 {
                return Err(Error::format("subword model", format!("alphabet entry `{p}` is not one character")));
            }
            if m.piece_ids.contains_key(&p) {
                return Err(Error::format("subword model", format!("duplicate alphabet entry `{p}`")));
            }
            m.intern(p);
        }
        for (l, r) in merge_strings {
            let li = *m.piece_ids.get(l).ok_or_else(|| {
                Error::format("subword model", format!("merge uses unknown piece `{l}`"))
            })?;
            let ri = *m.piece_ids.get(r).ok_or_else(|| {
                Error::format("subword model", format!("merge uses unknown piece `{r}`"))
            })?;
            m.push_merge(li, ri);
        }
        Ok(m)
    }

    fn intern(&mut self, piece: String) -> u32 {
        if let Some(&id) = self.piece_ids.get(&piece) {
            return id;
        }
        let id = FIRST_PIECE + self.pieces.len() as u32;
        self.piece_ids.insert(piece.clone(), id);
        self.pieces.push(piece);
        id
    }

    fn push_merge(&mut self, l: u32, r: u32) -> u32 {
        let joined = format!("{}{}", self.piece(l), self.piece(r));
        let out = self.intern(joined);
        self.ranks.entry((l, r)).or_insert(self.merges.len());
        self.merges.push((l, r));
        self.merge_out.push(out);
        out
    }

    fn piece(&self, id: u32) -> &str {
        &self.pieces[(id - FIRST_PIECE) as usize]
    }

    fn is_mergeable(id: u32) -> bool {
        id >= FIRST_PIECE
    }

    /// Learns merges greedily: the most frequent adjacent pair wins, ties go
    /// to the lexicographically smallest `(left, right)`; stops at
    /// `vocab_size` or when no pair occurs at least twice. The seed is accepted
    /// for interface stability; training is fully deterministic without it.
    pub fn train<S: AsRef<str>>(texts: &[S], vocab_size: usize, _seed: u64) -> Result<Self> {
        if vocab_size <= FIRST_PIECE as usize {
            return Err(Error::config(format!(
                "vocab_size {vocab_size} must exceed {FIRST_PIECE} (specials + byte tokens)"
            )));
        }
        if texts.is_empty() {
            return Err(Error::config("cannot train a subword model on no text"));
        }

        let mut chunk_counts: HashMap<Vec<Sym>, u64> = HashMap::new();
        for t in texts {
            for chunk in pretokenize(t.as_ref()) {
                *chunk_counts.entry(chunk).or_default() += 1;
            }
        }
        let mut chunks: Vec<(Vec<Sym>, u64)> = chunk_counts.into_iter().collect();
        chunks.sort();

        let mut char_freq: HashMap<char, u64> = HashMap::new();
        for (chunk, n) in &chunks {
            for s in chunk {
                if let Sym::Ch(c) = s {
                    if *c != MARKER {
                        *char_freq.entry(*c).or_default() += n;
                    }
                }
            }
        }
        let budget = vocab_size - FIRST_PIECE as usize;
        let mut chars: Vec<(char, u64)> = char_freq.into_iter().collect();
        chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        chars.truncate(budget.saturating_sub(1));
        let mut kept: Vec<char> = chars.into_iter().map(|(c, _)| c).collect();
        kept.sort_unstable();
        let alphabet: Vec<String> = std::iter::once(MARKER.to_string())
            .chain(kept.iter().map(|c| c.to_string()))
            .collect();
        let mut model = SubwordModel::from_parts(alphabet, &[])?;

        let mut words: Vec<Vec<u32>> = Vec::with_capacity(chunks.len());
        let mut counts: Vec<i64> = Vec::with_capacity(chunks.len());
        for (chunk, n) in &chunks {
            let mut ids = Vec::with_capacity(chunk.len());
            for &s in chunk {
                model.push_sym(s, &mut ids);
            }
            words.push(ids);
            counts.push(*n as i64);
        }

        let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
        let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
        for (wi, w) in words.iter().enumerate() {
            for p in w.windows(2) {
                if Self::is_mergeable(p[0]) && Self::is_mergeable(p[1]) {
                    *pair_counts.entry((p[0], p[1])).or_default() += counts[wi];
                    pair_words.entry((p[0], p[1])).or_default().insert(wi);
                }
            }
        }

        while model.vocab_size() < vocab_size {
            let mut best: Option<((u32, u32), i64)> = None;
            for (&pair, &n) in &pair_counts {
                if n < 2 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bp, bn)) => {
                        n > bn
                            || (n == bn
                                && (model.piece(pair.0), model.piece(pair.1))
                                    < (model.piece(bp.0), model.piece(bp.1)))
                    }
                };
                if better {
                    best = Some((pair, n));
                }
            }
            let Some((pair, _)) = best else { break };
            let out = model.push_merge(pair.0, pair.1);

            let mut affected: Vec<usize> = pair_words.remove(&pair).unwrap_or_default().into_iter().collect();
            affected.sort_unstable();
            for wi in affected {
                let w = &words[wi];
                if !w.windows(2).any(|p| (p[0], p[1]) == pair) {
                    continue;
                }
                for p in w.windows(2) {
                    if Self::is_mergeable(p[0]) && Self::is_mergeable(p[1]) {
                        *pair_counts.get_mut(&(p[0], p[1])).unwrap() -= counts[wi];
                    }
                }
                let merged = apply_merge(w, pair, out);
                for p in merged.windows(2) {
                    if Self::is_mergeable(p[0]) && Self::is_mergeable(p[1]) {
                        *pair_counts.entry((p[0], p[1])).or_default() += counts[wi];
                        pair_words.entry((p[0], p[1])).or_default().insert(wi);
                    }
                }
                words[wi] = merged;
            }
            pair_counts.retain(|_, n| *n > 0);
        }
        Ok(model)
    }

    fn push_sym(&self, s: Sym, out: &mut Vec<u32>) {
        if let Some(&id) = self.piece_ids.get(sym_piece(s).as_str()) {
            if !matches!(s, Sym::Ch(MARKER)) {
                out.push(id);
                return;
            }
        }
        let c = match s {
            Sym::Marker => MARKER,
            Sym::Ch(c) => c,
        };
        let mut buf = [0u8; 4];
        out.extend(c.encode_utf8(&mut buf).bytes().map(|b| BYTE_BASE + b as u32));
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_PIECE as usize + self.pieces.len()
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Learned merge rules in order, as `(left, right)` piece strings.
    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.merges.iter().map(|&(l, r)| (self.piece(l), self.piece(r)))
    }

    /// Display form of a token id.
    pub fn token(&self, id: u32) -> Option<Cow<'_, str>> {
        if id < NUM_SPECIALS {
            Some(Cow::Borrowed(SPECIAL_NAMES[id as usize]))
        } else if id < FIRST_PIECE {
            Some(Cow::Owned(format!("<0x{:02X}>", id - BYTE_BASE)))
        } else if (id as usize) < self.vocab_size() {
            Some(Cow::Borrowed(self.piece(id)))
        } else {
            None
        }
    }

    pub fn piece_id(&self, piece: &str) -> Option<u32> {
        self.piece_ids.get(piece).copied()
    }

    fn encode_chunk(&self, chunk: &[Sym], out: &mut Vec<u32>) {
        let mut ids = Vec::with_capacity(chunk.len());
        for &s in chunk {
            self.push_sym(s, &mut ids);
        }
        let mut last_rank: Option<usize> = None;
        loop {
            let mut best: Option<usize> = None;
            for p in ids.windows(2) {
                if let Some(&r) = self.ranks.get(&(p[0], p[1])) {
                    if last_rank.map_or(true, |lr| r > lr) && best.map_or(true, |b| r < b) {
                        best = Some(r);
                    }
                }
            }
            let Some(r) = best else { break };
            ids = apply_merge(&ids, self.merges[r], self.merge_out[r]);
            last_rank = Some(r);
        }
        out.extend(ids);
    }

    /// Token ids for `text`, applying merges in learned order. No EOS.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pretokenize(text) {
            self.encode_chunk(&chunk, &mut out);
        }
        out
    }

    pub fn encode_with_eos(&self, text: &str) -> Vec<u32> {
        let mut ids = self.encode(text);
        ids.push(EOS);
        ids
    }

    /// Inverse of [`encode`](Self::encode). Specials decode to nothing; byte
    /// runs that are not valid UTF-8 decode to U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        let mut bytes: Vec<u8> = Vec::new();
        let flush = |bytes: &mut Vec<u8>, out: &mut String| {
            if !bytes.is_empty() {
                out.push_str(&String::from_utf8_lossy(bytes));
                bytes.clear();
            }
        };
        for &id in ids {
            if id as usize >= self.vocab_size() {
                return Err(Error::Range(format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size()
                )));
            }
            if id < NUM_SPECIALS {
                continue;
            }
            if id < FIRST_PIECE {
                bytes.push((id - BYTE_BASE) as u8);
                continue;
            }
            flush(&mut bytes, &mut out);
            out.extend(self.piece(id).chars().map(|c| if c == MARKER { ' ' } else { c }));
        }
        flush(&mut bytes, &mut out);
        if out.starts_with(' ') {
            out.remove(0);
        }
        Ok(out)
    }

    /// Serialized model: header, specials, alphabet, merges (one per line).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER}");
        let _ = writeln!(s, "specials {}", SPECIAL_NAMES.join(" "));
        let _ = writeln!(s, "bytes 256");
        let _ = writeln!(s, "alphabet {}", self.alphabet_len);
        for p in &self.pieces[..self.alphabet_len] {
            let _ = writeln!(s, "{}", escape(p));
        }
        let _ = writeln!(s, "merges {}", self.merges.len());
        for (l, r) in self.merges() {
            let _ = writeln!(s, "{} {}", escape(l), escape(r));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("subword model", d);
        let mut lines = text.split('\n');
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("truncated before {what}")));
        if next("header")? != FORMAT_HEADER {
            return Err(bad("unknown header".into()));
        }
        if next("specials")? != format!("specials {}", SPECIAL_NAMES.join(" ")) {
            return Err(bad("unexpected specials line".into()));
        }
        if next("bytes")? != "bytes 256" {
            return Err(bad("unexpected bytes line".into()));
        }
        let count = |line: &str, key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| bad(format!("expected `{key}<count>`")))
        };
        let n_alpha = count(next("alphabet")?, "alphabet ")?;
        let mut alphabet = Vec::with_capacity(n_alpha);
        for _ in 0..n_alpha {
            alphabet.push(unescape(next("alphabet entry")?)?);
        }
        let n_merges = count(next("merges")?, "merges ")?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = next("merge")?;
            let (l, r) = line.split_once(' ').ok_or_else(|| bad(format!("bad merge line `{line}`")))?;
            merges.push((unescape(l)?, unescape(r)?));
        }
        if next("end").ok() != Some("") || lines.next().is_some() {
            return Err(bad("trailing content".into()));
        }
        SubwordModel::from_parts(alphabet, &merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Short content hash of the serialized model.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_merge(w: &[u32], pair: (u32, u32), out: u32) -> Vec<u32> {
    let mut merged = Vec::with_capacity(w.len());
    let mut i = 0;
    while i < w.len() {
        if i + 1 < w.len() && (w[i], w[i + 1]) == pair {
            merged.push(out);
            i += 2;
        } else {
            merged.push(w[i]);
            i += 1;
        }
    }
    merged
}

fn escape(p: &str) -> String {
    let mut s = String::with_capacity(p.len());
    for c in p.chars() {
        match c {
            '\\' => s.push_str("\\\\"),
            ' ' => s.push_str("\\s"),
            '\t' => s.push_str("\\t"),
            '\n' => s.push_str("\\n"),
            '\r' => s.push_str("\\r"),
            c => s.push(c),
        }
    }
    s
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match it.next() {
            Some('\\') => '\\',
            Some('s') => ' ',
            Some('t') => '\t',
            Some('n') => '\n',
            Some('r') => '\r',
            other => {
                return Err(Error::format("subword model", format!("bad escape \\{other:?} in `{s}`")))
            }
        });
    }
    if out.is_empty() {
        return Err(Error::format("subword model", "empty piece"));
    }
    Ok(out)
}

/// Free-function form of [`SubwordModel::train`].
pub fn train_bpe<S: AsRef<str>>(texts: &[S], vocab_size: usize, seed: u64) -> Result<SubwordModel> {
    SubwordModel::train(texts, vocab_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classic() -> Vec<String> {
        let mut t = Vec::new();
        for (w, n) in [("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)] {
            t.extend(std::iter::repeat(w.to_string()).take(n));
        }
        t
    }

    #[test]
    fn only_candidate_merges_first() {
        let m = SubwordModel::train(&["aa aa aa"], 300, 0).unwrap();
        assert_eq!(m.merges().next(), Some(("a", "a")));
    }

    #[test]
    fn classic_corpus_first_merge() {
        // Hand count: (e,s) = newest 6 + widest 3 = 9, tied with (s,t) = 9;
        // every other pair is below 9. Lexicographic tie-break picks (e,s).
        let m = SubwordModel::train(&classic(), 280, 0).unwrap();
        assert_eq!(m.merges().next(), Some(("e", "s")));
        let second = m.merges().nth(1).unwrap();
        assert_eq!(second, ("es", "t"));
    }

    #[test]
    fn singleton_pairs_learn_nothing() {
        let m = SubwordModel::train(&["ab cd"], 2000, 0).unwrap();
        assert_eq!(m.num_merges(), 0);
        assert_eq!(m.vocab_size(), 260 + 5);
    }

    #[test]
    fn vocab_size_too_small() {
        assert!(matches!(SubwordModel::train(&["a"], 260, 0), Err(Error::Config(_))));
        let empty: [&str; 0] = [];
        assert!(SubwordModel::train(&empty, 1000, 0).is_err());
    }

    #[test]
    fn encode_decode_basics() {
        let m = SubwordModel::train(&["tere maailm", "tere tere"], 400, 0).unwrap();
        assert!(m.encode("").is_empty());
        assert_eq!(m.decode(&[]).unwrap(), "");
        for s in ["tere, maailm", "  two  spaces ", "tab\there", "ŝ unseen ✓", "lit\u{2581}eral", "\n"] {
            assert_eq!(m.decode(&m.encode(s)).unwrap(), s, "round trip of {s:?}");
        }
        assert_eq!(*m.encode_with_eos("tere").last().unwrap(), EOS);
    }

    #[test]
    fn decode_errors_and_lossy_bytes() {
        let m = SubwordModel::train(&["abc abc"], 300, 0).unwrap();
        assert!(matches!(m.decode(&[10_000]), Err(Error::Range(_))));
        // 0xE2 alone is a truncated 3-byte sequence.
        assert_eq!(m.decode(&[BYTE_BASE + 0xE2]).unwrap(), "\u{FFFD}");
        assert_eq!(m.decode(&[BOS, EOS, PAD]).unwrap(), "");
    }

    #[test]
    fn serialization_is_byte_exact() {
        let m = SubwordModel::train(&["tere maailm", "tere tere\tx", "a\\b a\\b"], 400, 0).unwrap();
        let text = m.to_text();
        let back = SubwordModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        assert!(SubwordModel::from_text("nonsense").is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let a = SubwordModel::train(&classic(), 280, 1).unwrap();
        let b = SubwordModel::train(&classic(), 280, 2).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn encoding_matches_training_segmentation() {
        let texts = classic();
        let m = SubwordModel::train(&texts, 300, 0).unwrap();
        // with enough merges every training word becomes a single piece
        for w in ["low", "lower", "newest", "widest"] {
            assert_eq!(m.encode(w).len(), 1, "{w}");
        }
    }
}
