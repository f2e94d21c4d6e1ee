use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Direction, LangId, MonoCorpus, Origin, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

fn raw_lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

/// One sentence per line; lines are trimmed and empty lines dropped.
pub fn load_mono(path: impl AsRef<Path>, lang: LangId) -> Result<MonoCorpus> {
    let text = read_utf8(path.as_ref())?;
    let lines = raw_lines(&text)
        .into_iter()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    Ok(MonoCorpus { lang, lines })
}

/// Line `i` of `src_path` pairs with line `i` of `tgt_path`. Empty sides are
/// kept (cleaning removes them) so that alignment is never shifted.
pub fn load_parallel(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    direction: Direction,
) -> Result<ParallelCorpus> {
    let src = read_utf8(src_path.as_ref())?;
    let tgt = read_utf8(tgt_path.as_ref())?;
    let src_lines = raw_lines(&src);
    let tgt_lines = raw_lines(&tgt);
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Alignment {
            src_lines: src_lines.len(),
            tgt_lines: tgt_lines.len(),
        });
    }
    Ok(ParallelCorpus::from_pairs(
        direction,
        src_lines
            .into_iter()
            .zip(tgt_lines)
            .map(|(s, t)| (s.trim().to_owned(), t.trim().to_owned())),
    ))
}

/// Two-column tab-separated variant: `src<TAB>tgt` per line.
pub fn load_parallel_tsv(path: impl AsRef<Path>, direction: Direction) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let text = read_utf8(path)?;
    let mut pairs = Vec::new();
    for (i, line) in raw_lines(&text).into_iter().enumerate() {
        let (s, t) = line.split_once('\t').ok_or_else(|| {
            Error::format("parallel TSV", format!("{}:{}: missing tab", path.display(), i + 1))
        })?;
        pairs.push((s.trim().to_owned(), t.trim().to_owned()));
    }
    Ok(ParallelCorpus::from_pairs(direction, pairs))
}

pub fn write_lines<'a>(path: impl AsRef<Path>, lines: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buf = Vec::new();
    for line in lines {
        if line.contains('\n') {
            return Err(Error::Input(format!(
                "line for {} contains a newline",
                path.display()
            )));
        }
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn save_mono(path: impl AsRef<Path>, m: &MonoCorpus) -> Result<()> {
    write_lines(path, m.lines.iter().map(String::as_str))
}

pub fn save_parallel(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    c: &ParallelCorpus,
) -> Result<()> {
    write_lines(src_path, c.sources())?;
    write_lines(tgt_path, c.targets())
}

impl SentencePair {
    pub fn human(direction: &Direction, src: impl Into<String>, tgt: impl Into<String>) -> Self {
        SentencePair {
            src_lang: direction.src.clone(),
            tgt_lang: direction.tgt.clone(),
            src: src.into(),
            tgt: tgt.into(),
            origin: Origin::Human,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;

    fn dir() -> Direction {
        Direction::new(lang("et"), lang("vro")).unwrap()
    }

    #[test]
    fn mono_drops_empty_lines() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.txt");
        fs::write(&p, "a\n\n b \n").unwrap();
        let m = load_mono(&p, lang("et")).unwrap();
        assert_eq!(m.lines, vec!["a", "b"]);
    }

    #[test]
    fn mono_empty_file() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.txt");
        fs::write(&p, "").unwrap();
        assert!(load_mono(&p, lang("et")).unwrap().lines.is_empty());
    }

    #[test]
    fn mono_reports_invalid_utf8_offset() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.txt");
        fs::write(&p, b"ok\n\xffbad").unwrap();
        match load_mono(&p, lang("et")) {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_mono("/nonexistent/file.txt", lang("et")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn parallel_alignment() {
        let d = tempfile::tempdir().unwrap();
        let (s, t) = (d.path().join("s"), d.path().join("t"));
        fs::write(&s, "x\n").unwrap();
        fs::write(&t, "y\n").unwrap();
        let c = load_parallel(&s, &t, dir()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c.pairs[0].src.as_str(), c.pairs[0].tgt.as_str()), ("x", "y"));
        assert_eq!(c.pairs[0].origin, Origin::Human);

        fs::write(&s, "x\nx2\n").unwrap();
        match load_parallel(&s, &t, dir()) {
            Err(Error::Alignment { src_lines, tgt_lines }) => assert_eq!((src_lines, tgt_lines), (2, 1)),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn parallel_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let (s, t) = (d.path().join("a/s"), d.path().join("a/t"));
        let c = ParallelCorpus::from_pairs(dir(), [("tere", "tereq"), ("üks kaks", "ütś kats")]);
        save_parallel(&s, &t, &c).unwrap();
        assert_eq!(load_parallel(&s, &t, dir()).unwrap(), c);
    }

    #[test]
    fn tsv_loading() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.tsv");
        fs::write(&p, "a\tb\nc\td\n").unwrap();
        let c = load_parallel_tsv(&p, dir()).unwrap();
        assert_eq!(c.len(), 2);
        fs::write(&p, "no tab here\n").unwrap();
        assert!(load_parallel_tsv(&p, dir()).is_err());
    }
}
