/// Splits text into `(segment, separator)` pieces: a segment ends after
/// `.`, `!` or `?` followed by whitespace, or at a newline. Concatenating
/// every segment and separator gives back the input.
pub fn split_sentences(text: &str) -> Vec<(&str, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let boundary = c == '\n' || (matches!(c, '.' | '!' | '?') && chars.peek().is_some_and(|(_, n)| n.is_whitespace()));
        if !boundary {
            continue;
        }
        let seg_end = if c == '\n' { i } else { i + c.len_utf8() };
        let mut sep_end = seg_end;
        while let Some(&(j, n)) = chars.peek() {
            if !n.is_whitespace() {
                break;
            }
            sep_end = j + n.len_utf8();
            chars.next();
        }
        if c == '\n' && sep_end == seg_end {
            sep_end = i + 1;
        }
        out.push((&text[start..seg_end], &text[seg_end..sep_end]));
        start = sep_end;
    }
    if start < text.len() {
        out.push((&text[start..], ""));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rejoin(v: &[(&str, &str)]) -> String {
        v.iter().flat_map(|(a, b)| [*a, *b]).collect()
    }

    #[test]
    fn splits_and_rejoins() {
        let t = "Tere. Kuidas läheb?  Hästi!\nUus rida\n\nlõpp";
        let v = split_sentences(t);
        assert_eq!(rejoin(&v), t);
        let segs: Vec<&str> = v.iter().map(|p| p.0).collect();
        assert_eq!(segs, ["Tere.", "Kuidas läheb?", "Hästi!", "Uus rida", "lõpp"]);
        assert_eq!(v[1].1, "  ");
    }

    #[test]
    fn single_sentence_is_one_piece() {
        assert_eq!(split_sentences("kala on suur."), vec![("kala on suur.", "")]);
        assert_eq!(split_sentences("3.5 kg"), vec![("3.5 kg", "")]);
        assert!(split_sentences("").is_empty());
    }
}
