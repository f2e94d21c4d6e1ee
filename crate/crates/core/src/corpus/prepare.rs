//! Raw manifest → cleaned, deduplicated, split corpora plus a new manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    clean, dedup, dedup_mono, save_mono, save_parallel, split_holdout, CleanReport, CleaningConfig, CorpusManifest,
    DedupReport, MonoEntry, PairRole, SplitName, SplitSpec,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    pub cleaning: CleaningConfig,
    pub test_total: usize,
    pub valid_total: usize,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig { cleaning: CleaningConfig::default(), test_total: 1000, valid_total: 1000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    /// Per pair (`src-tgt`): cleaning and deduplication counts.
    pub pairs: Vec<(String, CleanReport, DedupReport)>,
    pub mono: Vec<(String, DedupReport)>,
}

impl PrepareReport {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\tdedup_eliminated\n", CleanReport::TSV_HEADER);
        for (name, c, d) in &self.pairs {
            s.push_str(&format!("{}\t{}\n", c.tsv_row(name), d.eliminated));
        }
        for (name, d) in &self.mono {
            s.push_str(&format!("mono.{name}\t{}\t{}\t-\t-\t-\t{}\n", d.before, d.after, d.eliminated));
        }
        s
    }
}

/// Cleans and deduplicates every pair with raw files, holds out test and
/// validation sets with quotas proportional to corpus size, deduplicates the
/// monolingual sets, and writes everything plus `manifest.toml` under `out`.
/// Pairs without raw files keep their existing split paths; zero-resource
/// pairs are never split.
pub fn prepare(m: &CorpusManifest, cfg: &PrepareConfig, out: &Path) -> Result<(CorpusManifest, PrepareReport)> {
    cfg.cleaning.validate()?;
    let mut result = m.clone();
    result.base_dir = out.to_path_buf();
    let mut report = PrepareReport { pairs: Vec::new(), mono: Vec::new() };

    let raw: Vec<usize> = (0..m.pairs.len())
        .filter(|&i| {
            let e = &m.pairs[i];
            e.role != PairRole::Zero && (e.raw_tsv.is_some() || (e.raw_src.is_some() && e.raw_tgt.is_some()))
        })
        .collect();
    let mut cleaned = Vec::new();
    for &i in &raw {
        let c = m.load_pair(&m.pairs[i], SplitName::Raw)?;
        let (c, cr) = clean(&c, &cfg.cleaning);
        let (c, dr) = dedup(&c);
        report.pairs.push((c.direction.to_string(), cr, dr));
        cleaned.push(c);
    }
    let spec = SplitSpec { test_total: cfg.test_total, valid_total: cfg.valid_total, seed: cfg.seed };
    let splits = split_holdout(&cleaned, &spec)?;
    for (&i, s) in raw.iter().zip(&splits) {
        let e = &mut result.pairs[i];
        let d = s.train.direction.to_string();
        let rel = |split: &str, l: &str| PathBuf::from("parallel").join(&d).join(format!("{split}.{l}"));
        for (name, c) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
            let (sp, tp) = (rel(name, e.src.as_str()), rel(name, e.tgt.as_str()));
            save_parallel(out.join(&sp), out.join(&tp), c)?;
            let (a, b) = match name {
                "train" => (&mut e.train_src, &mut e.train_tgt),
                "valid" => (&mut e.valid_src, &mut e.valid_tgt),
                _ => (&mut e.test_src, &mut e.test_tgt),
            };
            *a = Some(sp);
            *b = Some(tp);
        }
        e.raw_src = None;
        e.raw_tgt = None;
        e.raw_tsv = None;
    }
    // untouched paths must still resolve from the new location
    for (i, e) in result.pairs.iter_mut().enumerate() {
        if raw.contains(&i) {
            continue;
        }
        for p in [&mut e.train_src, &mut e.train_tgt, &mut e.valid_src, &mut e.valid_tgt, &mut e.test_src, &mut e.test_tgt]
            .into_iter()
            .flatten()
        {
            *p = m.resolve(p);
        }
    }
    result.mono.clear();
    for entry in &m.mono {
        let mut sets = Vec::new();
        for i in 0..entry.sets.len() {
            let mono = m.load_mono_set(&entry.lang, i)?;
            let (mono, dr) = dedup_mono(&mono);
            report.mono.push((format!("{}.{}", entry.lang, i + 1), dr));
            let rel = PathBuf::from("mono").join(entry.lang.as_str()).join(format!("set{}.txt", i + 1));
            save_mono(out.join(&rel), &mono)?;
            sets.push(rel);
        }
        result.mono.push(MonoEntry { lang: entry.lang.clone(), sets });
    }
    for p in result.lexicons.values_mut() {
        *p = m.resolve(p);
    }
    result.save(out.join("manifest.toml"))?;
    Ok((result, report))
}
