//! Small text helpers shared by the matching, QA and mock code.

/// Collapse every whitespace run to one space and trim both ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace-normalised exact comparison.
pub fn same_text(a: &str, b: &str) -> bool {
    a.split_whitespace().eq(b.split_whitespace())
}

pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "can", "do", "does", "for", "has", "have", "how", "i", "in",
    "is", "it", "its", "me", "much", "of", "on", "or", "the", "this", "that", "to", "was", "what",
    "when", "where", "which", "who", "why", "will", "with", "you", "your",
];

/// Crude suffix stripping so "tested" and "test", "features" and "feature" meet.
pub fn stem(word: &str) -> String {
    let mut w = word.to_lowercase();
    let len = w.chars().count();
    if len >= 6 && w.ends_with("ing") {
        w.truncate(w.len() - 3);
    } else if len >= 5
        && (w.ends_with("ed") || ["ses", "xes", "zes", "ches", "shes"].iter().any(|s| w.ends_with(s)))
    {
        w.truncate(w.len() - 2);
    } else if len >= 4 && w.ends_with('s') && !w.ends_with("ss") {
        w.truncate(w.len() - 1);
    }
    if w.chars().count() >= 4 && w.ends_with('e') {
        w.truncate(w.len() - 1);
    }
    w
}

/// Lower-cased, stemmed content words of `s`, in order, without duplicates.
pub fn keywords(s: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for raw in s.split(|c: char| !is_word_char(c) && c != '$' && c != '.') {
        let raw = raw.trim_matches('.');
        if raw.is_empty() {
            continue;
        }
        let lower = raw.to_lowercase();
        if STOPWORDS.contains(&lower.as_str()) {
            continue;
        }
        let k = stem(&lower);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}
