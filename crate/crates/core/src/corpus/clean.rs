use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::{MonoCorpus, ParallelCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub max_len_words: usize,
    pub len_ratio_max: f64,
    pub normalize_unicode: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            max_len_words: 200,
            len_ratio_max: 9.0,
            normalize_unicode: true,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len_words == 0 {
            return Err(Error::config("max_len_words must be positive"));
        }
        if !(self.len_ratio_max >= 1.0) {
            return Err(Error::config("len_ratio_max must be at least 1"));
        }
        Ok(())
    }
}

/// NFC normalization followed by trimming.
pub fn normalize_text(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.trim().to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub before: usize,
    pub after: usize,
    pub eliminated: usize,
}

/// Keeps the first occurrence of every exact `(src, tgt)` pair, comparing the
/// NFC-normalized, trimmed texts.
pub fn dedup(c: &ParallelCorpus) -> (ParallelCorpus, DedupReport) {
    let mut seen = HashSet::with_capacity(c.len());
    let pairs: Vec<_> = c
        .pairs
        .iter()
        .filter(|p| seen.insert((normalize_text(&p.src), normalize_text(&p.tgt))))
        .cloned()
        .collect();
    let report = DedupReport {
        before: c.len(),
        after: pairs.len(),
        eliminated: c.len() - pairs.len(),
    };
    (
        ParallelCorpus {
            direction: c.direction.clone(),
            pairs,
        },
        report,
    )
}

pub fn dedup_mono(m: &MonoCorpus) -> (MonoCorpus, DedupReport) {
    let mut seen = HashSet::with_capacity(m.len());
    let lines: Vec<_> = m
        .lines
        .iter()
        .filter(|l| seen.insert(normalize_text(l)))
        .cloned()
        .collect();
    let report = DedupReport {
        before: m.len(),
        after: lines.len(),
        eliminated: m.len() - lines.len(),
    };
    (MonoCorpus::new(m.lang.clone(), lines), report)
}

/// Per-rule removal counts. Each removed pair is attributed to the first rule
/// it fails, in field order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub before: usize,
    pub after: usize,
    pub empty_side: usize,
    pub too_long: usize,
    pub length_ratio: usize,
}

impl CleanReport {
    pub fn removed(&self) -> usize {
        self.empty_side + self.too_long + self.length_ratio
    }

    pub const TSV_HEADER: &'static str = "corpus\tbefore\tafter\tempty_side\ttoo_long\tlength_ratio";

    pub fn tsv_row(&self, name: &str) -> String {
        format!(
            "{name}\t{}\t{}\t{}\t{}\t{}",
            self.before, self.after, self.empty_side, self.too_long, self.length_ratio
        )
    }
}

enum Verdict {
    Keep,
    EmptySide,
    TooLong,
    Ratio,
}

fn judge(src: &str, tgt: &str, cfg: &CleaningConfig) -> Verdict {
    let ns = src.split_whitespace().count();
    let nt = tgt.split_whitespace().count();
    if ns == 0 || nt == 0 {
        return Verdict::EmptySide;
    }
    if ns > cfg.max_len_words || nt > cfg.max_len_words {
        return Verdict::TooLong;
    }
    let ratio = ns.max(nt) as f64 / ns.min(nt) as f64;
    if ratio > cfg.len_ratio_max {
        return Verdict::Ratio;
    }
    Verdict::Keep
}

pub fn clean(c: &ParallelCorpus, cfg: &CleaningConfig) -> (ParallelCorpus, CleanReport) {
    let mut report = CleanReport {
        before: c.len(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(c.len());
    for p in &c.pairs {
        let (src, tgt) = if cfg.normalize_unicode {
            (normalize_text(&p.src), normalize_text(&p.tgt))
        } else {
            (p.src.clone(), p.tgt.clone())
        };
        match judge(&src, &tgt, cfg) {
            Verdict::Keep => {
                let mut kept = p.clone();
                kept.src = src;
                kept.tgt = tgt;
                pairs.push(kept);
            }
            Verdict::EmptySide => report.empty_side += 1,
            Verdict::TooLong => report.too_long += 1,
            Verdict::Ratio => report.length_ratio += 1,
        }
    }
    report.after = pairs.len();
    (
        ParallelCorpus {
            direction: c.direction.clone(),
            pairs,
        },
        report,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{lang, Direction};

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::from_pairs(
            Direction::new(lang("fi"), lang("sme")).unwrap(),
            pairs.iter().copied(),
        )
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let (d, r) = dedup(&corpus(&[("a", "b"), ("a", "b"), ("a", "c")]));
        assert_eq!(d.pairs.iter().map(|p| p.tgt.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(r, DedupReport { before: 3, after: 2, eliminated: 1 });
    }

    #[test]
    fn dedup_without_duplicates_is_identity() {
        let c = corpus(&[("a", "b"), ("b", "a")]);
        let (d, r) = dedup(&c);
        assert_eq!(d, c);
        assert_eq!(r.eliminated, 0);
    }

    #[test]
    fn dedup_compares_normalized_text() {
        // "õ" precomposed vs o + combining tilde
        let c = corpus(&[("t\u{f5}", "x"), ("to\u{303} ", "x")]);
        assert_eq!(dedup(&c).1.eliminated, 1);
    }

    #[test]
    fn dedup_is_per_pair_not_per_side() {
        let c = corpus(&[("a", "b"), ("a", "c"), ("d", "b")]);
        assert_eq!(dedup(&c).1.eliminated, 0);
    }

    #[test]
    fn clean_rules() {
        let cfg = CleaningConfig {
            max_len_words: 3,
            len_ratio_max: 2.0,
            normalize_unicode: true,
        };
        let c = corpus(&[
            ("a b c", ""),
            ("a b c d", "x"),
            ("a", "x y z"),
            ("a b", "x y z"),
            ("ok", "fine"),
        ]);
        let (out, r) = clean(&c, &cfg);
        assert_eq!(out.len(), 2);
        assert_eq!(out.pairs[0].src, "a b");
        assert_eq!(r.empty_side, 1);
        assert_eq!(r.too_long, 1);
        assert_eq!(r.length_ratio, 1);
        assert_eq!(r.removed(), r.before - r.after);
    }

    #[test]
    fn config_validation() {
        assert!(CleaningConfig::default().validate().is_ok());
        let bad = CleaningConfig {
            len_ratio_max: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mono_dedup() {
        let m = MonoCorpus::new(lang("et"), vec!["a".into(), "b".into(), "a".into()]);
        let (d, r) = dedup_mono(&m);
        assert_eq!(d.lines, vec!["a", "b"]);
        assert_eq!(r.eliminated, 1);
    }
}
