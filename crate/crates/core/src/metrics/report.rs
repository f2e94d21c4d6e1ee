use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{bleu_signature, chrf_signature};
use crate::corpus::{lang, Direction};
use crate::error::{Error, Result};

/// Half-up rounding for display; values already within 1e-9 of a half step
/// are treated as exactly on it, so 0.15 shows as 0.2.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let y = x * scale;
    (y + 0.5 + 1e-9 * y.abs().max(1.0)).floor() / scale
}

pub fn format_fixed(x: f64, decimals: u32) -> String {
    let r = round_half_up(x, decimals);
    let s = format!("{r:.*}", decimals as usize);
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// The ten directions of the five-language grid, in report column order.
pub fn grid_columns() -> Vec<Direction> {
    [("et", "fi"), ("fi", "et"), ("et", "vro"), ("vro", "et"), ("fi", "sme"), ("sme", "fi"), ("fi", "sma"), ("sma", "fi"), ("sme", "sma"), ("sma", "sme")]
        .iter()
        .map(|(s, t)| Direction::new(lang(s), lang(t)).unwrap())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirScore {
    pub direction: String,
    pub bleu: f64,
    pub chrf: f64,
    pub bleu_signature: String,
    pub chrf_signature: String,
}

/// One model's scores: a row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub label: String,
    pub test_set: String,
    pub scores: Vec<DirScore>,
    pub bleu_low: Option<f64>,
    pub chrf_low: Option<f64>,
}

impl ScoreReport {
    pub fn new(label: impl Into<String>, test_set: impl Into<String>) -> Self {
        ScoreReport {
            label: label.into(),
            test_set: test_set.into(),
            scores: Vec::new(),
            bleu_low: None,
            chrf_low: None,
        }
    }

    pub fn push(&mut self, direction: &Direction, bleu: f64, chrf: f64) {
        let (s, t) = (direction.src.as_str(), direction.tgt.as_str());
        self.scores.push(DirScore {
            direction: direction.to_string(),
            bleu,
            chrf,
            bleu_signature: bleu_signature(s, t, &self.test_set),
            chrf_signature: chrf_signature(s, t, &self.test_set),
        });
    }

    pub fn get(&self, direction: &str) -> Option<&DirScore> {
        self.scores.iter().find(|d| d.direction == direction)
    }

    /// Fills `bleu_low`/`chrf_low` with the mean over the low-resource
    /// directions. Every one of them must be present.
    pub fn aggregate(&mut self, low: &[Direction]) -> Result<()> {
        if low.is_empty() {
            return Err(Error::Aggregation("no low-resource directions given".into()));
        }
        let (mut b, mut c) = (0.0, 0.0);
        for d in low {
            let key = d.to_string();
            let s = self
                .get(&key)
                .ok_or_else(|| Error::Aggregation(format!("missing direction {key} in `{}`", self.label)))?;
            b += s.bleu;
            c += s.chrf;
        }
        self.bleu_low = Some(b / low.len() as f64);
        self.chrf_low = Some(c / low.len() as f64);
        Ok(())
    }

    pub fn directions(&self) -> Vec<&str> {
        self.scores.iter().map(|d| d.direction.as_str()).collect()
    }
}

/// Builds a report from bare BLEU values in column order (chrF left at 0),
/// e.g. for rows transcribed from a published table.
pub fn report_from_bleu(label: &str, columns: &[Direction], values: &[f64]) -> ScoreReport {
    let mut r = ScoreReport::new(label, "table");
    for (d, v) in columns.iter().zip(values) {
        r.push(d, *v, 0.0);
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub label: String,
    pub against: String,
    /// `(direction, bleu delta, chrF delta)` in column order.
    pub deltas: Vec<(String, f64, f64)>,
    pub bleu_low: Option<f64>,
    pub chrf_low: Option<f64>,
}

/// Per-direction and aggregate differences `a − b`.
pub fn compare(a: &ScoreReport, b: &ScoreReport) -> Result<DeltaRow> {
    let (da, db) = (a.directions(), b.directions());
    let mut sa = da.clone();
    let mut sb = db.clone();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb {
        return Err(Error::Input(format!(
            "reports `{}` and `{}` cover different directions",
            a.label, b.label
        )));
    }
    let deltas = a
        .scores
        .iter()
        .map(|s| {
            let o = b.get(&s.direction).unwrap();
            (s.direction.clone(), s.bleu - o.bleu, s.chrf - o.chrf)
        })
        .collect();
    let diff = |x: Option<f64>, y: Option<f64>| Some(x? - y?);
    Ok(DeltaRow {
        label: a.label.clone(),
        against: b.label.clone(),
        deltas,
        bleu_low: diff(a.bleu_low, b.bleu_low),
        chrf_low: diff(a.chrf_low, b.chrf_low),
    })
}

/// Several reports over the same directions, with deltas against the first
/// row and the best row per column (full precision, ties to the earlier row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub reports: Vec<ScoreReport>,
    pub deltas: Vec<DeltaRow>,
    /// Index into `reports` of the best BLEU per column; the last entry is BLEU_low.
    pub best_bleu: Vec<Option<usize>>,
    pub best_chrf: Vec<Option<usize>>,
}

fn best_index(values: impl Iterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if let Some(v) = v {
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

impl ComparisonTable {
    pub fn build(columns: &[Direction], reports: Vec<ScoreReport>) -> Result<Self> {
        let columns: Vec<String> = columns.iter().map(|d| d.to_string()).collect();
        let mut deltas = Vec::new();
        if let Some(first) = reports.first() {
            for r in &reports {
                deltas.push(compare(r, first)?);
            }
        }
        let mut best_bleu = Vec::new();
        let mut best_chrf = Vec::new();
        for c in &columns {
            best_bleu.push(best_index(reports.iter().map(|r| r.get(c).map(|s| s.bleu))));
            best_chrf.push(best_index(reports.iter().map(|r| r.get(c).map(|s| s.chrf))));
        }
        best_bleu.push(best_index(reports.iter().map(|r| r.bleu_low)));
        best_chrf.push(best_index(reports.iter().map(|r| r.chrf_low)));
        Ok(ComparisonTable { columns, reports, deltas, best_bleu, best_chrf })
    }

    fn table(&self, name: &str, chrf: bool) -> String {
        let (decimals, best) = if chrf { (3, &self.best_chrf) } else { (1, &self.best_bleu) };
        let mut s = String::new();
        let _ = write!(s, "{name}\tmodel");
        for c in &self.columns {
            let _ = write!(s, "\t{c}");
        }
        let _ = writeln!(s, "\t{}", if chrf { "CHRF_low" } else { "BLEU_low" });
        for (i, r) in self.reports.iter().enumerate() {
            let _ = write!(s, "{name}\t{}", r.label);
            let cells = self
                .columns
                .iter()
                .map(|c| r.get(c).map(|d| if chrf { d.chrf } else { d.bleu }))
                .chain(std::iter::once(if chrf { r.chrf_low } else { r.bleu_low }));
            for (j, v) in cells.enumerate() {
                let cell = match v {
                    None => "-".to_string(),
                    Some(v) if best[j] == Some(i) => format!("**{}**", format_fixed(v, decimals)),
                    Some(v) => format_fixed(v, decimals),
                };
                let _ = write!(s, "\t{cell}");
            }
            s.push('\n');
        }
        s
    }

    /// Tab-separated BLEU table, chrF table, deltas, and signature lines.
    pub fn to_tsv(&self) -> String {
        let mut s = self.table("BLEU", false);
        s.push_str(&self.table("chrF", true));
        for d in &self.deltas {
            let _ = write!(s, "delta\t{} - {}", d.label, d.against);
            for (_, b, _) in &d.deltas {
                let _ = write!(s, "\t{}", format_signed(*b, 1));
            }
            let _ = writeln!(s, "\t{}", d.bleu_low.map_or("-".into(), |v| format_signed(v, 1)));
        }
        if let Some(r) = self.reports.first() {
            for d in &r.scores {
                let _ = writeln!(s, "signature\t{}\t{}\t{}", d.direction, d.bleu_signature, d.chrf_signature);
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn format_signed(x: f64, decimals: u32) -> String {
    let s = format_fixed(x, decimals);
    if s.starts_with('-') || s.chars().all(|c| c == '0' || c == '.') {
        s
    } else {
        format!("+{s}")
    }
}
