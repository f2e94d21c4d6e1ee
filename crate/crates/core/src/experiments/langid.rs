//! Word-list language identification for toy languages.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::{CorpusManifest, LangId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct LanguageIdentifier {
    lexicons: BTreeMap<LangId, HashSet<String>>,
}

impl LanguageIdentifier {
    pub fn new(lexicons: BTreeMap<LangId, Vec<String>>) -> Self {
        LanguageIdentifier { lexicons: lexicons.into_iter().map(|(l, w)| (l, w.into_iter().collect())).collect() }
    }

    /// Uses the lexicon files named in the manifest; every declared
    /// language must have one.
    pub fn from_manifest(m: &CorpusManifest) -> Result<Self> {
        let mut lex = BTreeMap::new();
        for l in &m.languages {
            let words = m.lexicon(l)?.ok_or_else(|| Error::config(format!("manifest has no lexicon for {l}")))?;
            lex.insert(l.clone(), words);
        }
        Ok(Self::new(lex))
    }

    pub fn languages(&self) -> impl Iterator<Item = &LangId> {
        self.lexicons.keys()
    }

    /// The language whose word list covers the most tokens of `text`;
    /// `None` when nothing matches or the best count is shared.
    pub fn identify(&self, text: &str) -> Option<LangId> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut best: Option<(&LangId, usize)> = None;
        let mut tied = false;
        for (l, words) in &self.lexicons {
            let n = tokens.iter().filter(|t| words.contains(**t)).count();
            match best {
                _ if n == 0 => {}
                Some((_, b)) if n < b => {}
                Some((_, b)) if n == b => tied = true,
                _ => {
                    best = Some((l, n));
                    tied = false;
                }
            }
        }
        best.filter(|_| !tied).map(|(l, _)| l.clone())
    }

    /// Fraction of `outputs` identified as `expected`.
    pub fn on_target_rate<S: AsRef<str>>(&self, outputs: &[S], expected: &LangId) -> f64 {
        if outputs.is_empty() {
            return 0.0;
        }
        let hits = outputs.iter().filter(|o| self.identify(o.as_ref()).as_ref() == Some(expected)).count();
        hits as f64 / outputs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;

    fn ident() -> LanguageIdentifier {
        let mut m = BTreeMap::new();
        m.insert(lang("aa"), vec!["kala".to_string(), "maja".into(), "on".into()]);
        m.insert(lang("bb"), vec!["kalaq".to_string(), "maja".into(), "om".into()]);
        LanguageIdentifier::new(m)
    }

    #[test]
    fn majority_wins_and_ties_are_unknown() {
        let id = ident();
        assert_eq!(id.identify("kala on maja"), Some(lang("aa")));
        assert_eq!(id.identify("kalaq om maja"), Some(lang("bb")));
        assert_eq!(id.identify("maja"), None);
        assert_eq!(id.identify("xyz"), None);
        assert_eq!(id.identify("kala om"), None);
    }

    #[test]
    fn rate() {
        let id = ident();
        assert_eq!(id.on_target_rate(&["kala on", "kalaq", "maja", "on"], &lang("aa")), 0.5);
        assert_eq!(id.on_target_rate::<&str>(&[], &lang("aa")), 0.0);
    }
}
