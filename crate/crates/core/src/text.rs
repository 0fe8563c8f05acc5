//! Text normalization shared by every index and metric.

/// Lowercases and collapses internal whitespace runs to a single space,
/// trimming both ends. Used for full queries.
pub fn normalize_query(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Like [`normalize_query`] but keeps a single trailing space when the input
/// ends in whitespace: a typed prefix "paris " is a different prefix than "paris".
pub fn normalize_prefix(s: &str) -> String {
    let mut out = normalize_query(s);
    if !out.is_empty() && s.ends_with(char::is_whitespace) {
        out.push(' ');
    }
    out
}

/// Lowercase word tokens with surrounding punctuation stripped.
pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .chars()
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Splits on `.`, `?` or `!` followed by whitespace (or end of text).
/// Sentences keep their terminal punctuation; empty pieces are dropped.
pub fn split_sentences(body: &str) -> Vec<String> {
    let chars: Vec<char> = body.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '?' | '!') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            push_trimmed(&mut out, &chars[start..=i]);
            start = i + 1;
        }
        i += 1;
    }
    if start < chars.len() {
        push_trimmed(&mut out, &chars[start..]);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &[char]) {
    let s: String = piece.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Character-indexed slicing helpers; queries are split at character, not byte, offsets.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

pub fn split_at_char(s: &str, i: usize) -> (&str, &str) {
    let byte = s.char_indices().nth(i).map_or(s.len(), |(b, _)| b);
    s.split_at(byte)
}

/// The fixed 127-word English stopword list used by keyphrase extraction and
/// nugget selection.
pub fn stopwords() -> &'static std::collections::HashSet<&'static str> {
    use std::sync::OnceLock;
    static SET: OnceLock<std::collections::HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| include_str!("stopwords.txt").split_whitespace().collect())
}

pub fn is_stopword(w: &str) -> bool {
    stopwords().contains(w)
}
