//! BLEU and chrF matching sacreBLEU (BLEU as of 1.4.14 with the 13a
//! tokenizer and exponential smoothing; chrF2 as of 1.5.1), plus score
//! reports and their aggregation.

mod report;

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

pub use report::{
    compare, format_fixed, format_signed, grid_columns, report_from_bleu, round_half_up, ComparisonTable, DeltaRow, DirScore,
    ScoreReport,
};

pub const BLEU_ORDER: usize = 4;
pub const CHRF_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;
const BLEU_VERSION: &str = "1.4.14";
const CHRF_VERSION: &str = "1.5.1";

/// Whitespace as Python's `str.isspace` sees it (adds the ASCII separators).
fn py_space(c: char) -> bool {
    c.is_whitespace() || ('\x1c'..='\x1f').contains(&c)
}

struct Tok13a {
    symbols: Regex,
    period_comma_left: Regex,
    period_comma_right: Regex,
    dash_after_digit: Regex,
}

fn tok13a() -> &'static Tok13a {
    static T: OnceLock<Tok13a> = OnceLock::new();
    T.get_or_init(|| Tok13a {
        symbols: Regex::new(r"([\x7B-\x7E\x5B-\x60\x20-\x26\x28-\x2B\x3A-\x40/])").unwrap(),
        period_comma_left: Regex::new(r"([^0-9])([.,])").unwrap(),
        period_comma_right: Regex::new(r"([.,])([^0-9])").unwrap(),
        dash_after_digit: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// The 13a tokenization, returned as whitespace-joined text.
pub fn tokenize_13a_line(line: &str) -> String {
    let mut s = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let t = tok13a();
    let s = format!(" {s} ");
    let s = t.symbols.replace_all(&s, " $1 ");
    let s = t.period_comma_left.replace_all(&s, "$1 $2 ");
    let s = t.period_comma_right.replace_all(&s, " $1 $2");
    let s = t.dash_after_digit.replace_all(&s, "$1 $2 ");
    s.split(py_space).filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ")
}

pub fn tokenize_13a(text: &str) -> Vec<String> {
    tokenize_13a_line(text).split(' ').filter(|w| !w.is_empty()).map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub correct: [u64; BLEU_ORDER],
    pub total: [u64; BLEU_ORDER],
    /// Smoothed n-gram precisions in percent.
    pub precisions: [f64; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub sys_len: u64,
    pub ref_len: u64,
}

fn check_lengths(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::Input(format!("{hyps} hypotheses but {refs} references")));
    }
    if hyps == 0 {
        return Err(Error::Input("cannot score an empty corpus".into()));
    }
    Ok(())
}

/// Corpus BLEU in [0, 100].
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<BleuScore> {
    check_lengths(hyps.len(), refs.len())?;
    let mut correct = [0u64; BLEU_ORDER];
    let mut total = [0u64; BLEU_ORDER];
    let (mut sys_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hyps.iter().zip(refs) {
        let h = tokenize_13a_line(h.as_ref().trim_end_matches(py_space));
        let r = tokenize_13a_line(r.as_ref().trim_end_matches(py_space));
        let ht: Vec<&str> = h.split(' ').filter(|w| !w.is_empty()).collect();
        let rt: Vec<&str> = r.split(' ').filter(|w| !w.is_empty()).collect();
        sys_len += ht.len() as u64;
        ref_len += rt.len() as u64;
        for n in 1..=BLEU_ORDER {
            let mut rc: HashMap<&[&str], u64> = HashMap::new();
            if rt.len() >= n {
                for g in rt.windows(n) {
                    *rc.entry(g).or_default() += 1;
                }
            }
            let mut hc: HashMap<&[&str], u64> = HashMap::new();
            if ht.len() >= n {
                for g in ht.windows(n) {
                    *hc.entry(g).or_default() += 1;
                }
                total[n - 1] += (ht.len() - n + 1) as u64;
            }
            for (g, c) in hc {
                correct[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
        }
    }
    Ok(bleu_from_stats(correct, total, sys_len, ref_len))
}

/// Final BLEU from sufficient statistics, with exponential smoothing.
pub fn bleu_from_stats(
    correct: [u64; BLEU_ORDER],
    total: [u64; BLEU_ORDER],
    sys_len: u64,
    ref_len: u64,
) -> BleuScore {
    let mut precisions = [0.0; BLEU_ORDER];
    let mut smooth = 1.0;
    for n in 0..BLEU_ORDER {
        if total[n] == 0 {
            break;
        }
        if correct[n] == 0 {
            smooth *= 2.0;
            precisions[n] = 100.0 / (smooth * total[n] as f64);
        } else {
            precisions[n] = 100.0 * correct[n] as f64 / total[n] as f64;
        }
    }
    let brevity_penalty = if sys_len < ref_len {
        if sys_len > 0 {
            (1.0 - ref_len as f64 / sys_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    // Geometric mean taken over fractions rather than percentages so that a
    // perfect match is exactly 100 instead of 100 plus rounding noise.
    let log_sum: f64 = precisions
        .iter()
        .map(|&p| if p == 0.0 { -9_999_999_999.0 } else { (p / 100.0).ln() })
        .sum();
    let score = brevity_penalty * 100.0 * (log_sum / BLEU_ORDER as f64).exp();
    BleuScore { score, correct, total, precisions, brevity_penalty, sys_len, ref_len }
}

/// Corpus chrF2 on the [0, 1] scale.
///
/// Character n-gram statistics (whitespace removed) are summed over the
/// corpus; precision and recall are averaged over the orders for which both
/// sides have n-grams, then combined with β = 2.
pub fn chrf<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    check_lengths(hyps.len(), refs.len())?;
    let mut stats = [[0u64; 3]; CHRF_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        let hc: Vec<char> = h.as_ref().chars().filter(|c| !py_space(*c)).collect();
        let rc: Vec<char> = r.as_ref().chars().filter(|c| !py_space(*c)).collect();
        for n in 1..=CHRF_ORDER {
            let hg = char_ngrams(&hc, n);
            let rg = char_ngrams(&rc, n);
            let st = &mut stats[n - 1];
            st[0] += hg.values().sum::<u64>();
            st[1] += rg.values().sum::<u64>();
            st[2] += hg.iter().map(|(g, c)| (*c).min(rg.get(g).copied().unwrap_or(0))).sum::<u64>();
        }
    }
    Ok(chrf_from_stats(&stats))
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut m = HashMap::new();
    if chars.len() >= n {
        for g in chars.windows(n) {
            *m.entry(g).or_default() += 1;
        }
    }
    m
}

fn chrf_from_stats(stats: &[[u64; 3]; CHRF_ORDER]) -> f64 {
    let (mut p, mut r, mut eff) = (0.0, 0.0, 0u32);
    for &[hyp, rf, common] in stats {
        if hyp > 0 && rf > 0 {
            p += common as f64 / hyp as f64;
            r += common as f64 / rf as f64;
            eff += 1;
        }
    }
    if eff == 0 {
        return 0.0;
    }
    p /= eff as f64;
    r /= eff as f64;
    if p + r == 0.0 {
        return 0.0;
    }
    let b2 = CHRF_BETA * CHRF_BETA;
    (1.0 + b2) * p * r / (b2 * p + r)
}

pub fn bleu_signature(src: &str, tgt: &str, test_set: &str) -> String {
    format!(
        "BLEU+case.mixed+lang.{src}-{tgt}+numrefs.1+smooth.exp+test.{test_set}+tok.13a+version.{BLEU_VERSION}"
    )
}

pub fn chrf_signature(src: &str, tgt: &str, test_set: &str) -> String {
    format!(
        "chrF2+lang.{src}-{tgt}+numchars.6+numrefs.1+space.false+test.{test_set}+version.{CHRF_VERSION}"
    )
}
