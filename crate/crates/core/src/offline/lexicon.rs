//! Prohibited-term detection and removal.
//!
//! Matching is ASCII case-insensitive and whole-word: a match may not touch a
//! word character on either side. Overlapping matches resolve leftmost first,
//! then longest.

use std::io::BufRead;
use std::path::Path;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ModelBackend, RewritePrompt};
use crate::jsonl::{self, JsonlError};
use crate::text::is_word_char;

pub const LEXICON_VERSION: u32 = 1;

/// Deterministic passes before falling back to removal only.
const MAX_PASSES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Remove,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub pattern: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
    pub category: String,
}

impl LexiconEntry {
    pub fn remove(pattern: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            action: Action::Remove,
            replacement: None,
            category: category.into(),
        }
    }

    pub fn replace(pattern: impl Into<String>, replacement: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            action: Action::Replace,
            replacement: Some(replacement.into()),
            category: category.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("entry {index}: pattern is empty or has surrounding whitespace")]
    BadPattern { index: usize },
    #[error("pattern {0:?} appears more than once")]
    Duplicate(String),
    #[error("pattern {0:?} has action replace but no replacement")]
    MissingReplacement(String),
    #[error("replacement for {pattern:?} contains prohibited term {found:?}")]
    SelfMatchingReplacement { pattern: String, found: String },
    #[error("lexicon file version {found}, expected {LEXICON_VERSION}")]
    Version { found: u32 },
    #[error(transparent)]
    File(#[from] JsonlError),
    #[error("building matcher: {0}")]
    Build(#[from] aho_corasick::BuildError),
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    matcher: Option<AhoCorasick>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconHeader {
    version: u32,
}

impl Lexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self, LexiconError> {
        let mut seen = std::collections::HashSet::new();
        for (index, e) in entries.iter().enumerate() {
            if e.pattern.is_empty() || e.pattern.trim() != e.pattern {
                return Err(LexiconError::BadPattern { index });
            }
            if !seen.insert(e.pattern.to_ascii_lowercase()) {
                return Err(LexiconError::Duplicate(e.pattern.clone()));
            }
            if e.action == Action::Replace && e.replacement.is_none() {
                return Err(LexiconError::MissingReplacement(e.pattern.clone()));
            }
        }
        let matcher = if entries.is_empty() {
            None
        } else {
            Some(
                AhoCorasickBuilder::new()
                    .ascii_case_insensitive(true)
                    .match_kind(MatchKind::Standard)
                    .build(entries.iter().map(|e| e.pattern.as_str()))?,
            )
        };
        let lex = Self { entries, matcher };
        for e in &lex.entries {
            if let Some(r) = &e.replacement {
                if let Some(m) = detect_prohibited(r, &lex).first() {
                    return Err(LexiconError::SelfMatchingReplacement {
                        pattern: e.pattern.clone(),
                        found: m.pattern.clone(),
                    });
                }
            }
        }
        Ok(lex)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Small built-in list of absolute and medical claims, used when no
    /// lexicon file is configured.
    pub fn builtin() -> Self {
        let entries = vec![
            LexiconEntry::replace("best in the world", "highly rated", "absolute-claim"),
            LexiconEntry::replace("number one", "popular", "absolute-claim"),
            LexiconEntry::replace("lowest price ever", "a good price", "absolute-claim"),
            LexiconEntry::replace("100% safe", "tested", "absolute-claim"),
            LexiconEntry::remove("guaranteed", "absolute-claim"),
            LexiconEntry::remove("risk-free", "absolute-claim"),
            LexiconEntry::remove("miracle", "medical-claim"),
            LexiconEntry::replace("cures", "may ease", "medical-claim"),
            LexiconEntry::replace("clinically proven", "tested", "medical-claim"),
            LexiconEntry::remove("limited time only", "pressure"),
            LexiconEntry::replace("buy now or miss out", "available now", "pressure"),
        ];
        Self::new(entries).expect("built-in lexicon is valid")
    }

    /// Read a lexicon file: a `{"version": 1}` header, then one entry per line.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, LexiconError> {
        let (header, entries): (LexiconHeader, Vec<LexiconEntry>) = jsonl::read_with_header(reader)?;
        if header.version != LEXICON_VERSION {
            return Err(LexiconError::Version { found: header.version });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let file = std::fs::File::open(path).map_err(JsonlError::Io)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn write_to<W: std::io::Write>(&self, writer: W) -> Result<(), JsonlError> {
        jsonl::write_with_header(
            writer,
            &LexiconHeader {
                version: LEXICON_VERSION,
            },
            &self.entries,
        )
    }
}

/// One occurrence of a lexicon pattern. Offsets are byte offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub pattern: String,
    pub start: usize,
    pub end: usize,
    pub action: Action,
    pub category: String,
}

fn whole_word(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
}

/// All whole-word occurrences, non-overlapping, leftmost-longest.
pub fn detect_prohibited(text: &str, lexicon: &Lexicon) -> Vec<Match> {
    let Some(ac) = &lexicon.matcher else {
        return Vec::new();
    };
    let mut hits: Vec<(usize, usize, usize)> = ac
        .find_overlapping_iter(text)
        .filter(|m| text.is_char_boundary(m.start()) && text.is_char_boundary(m.end()))
        .filter(|m| whole_word(text, m.start(), m.end()))
        .map(|m| (m.start(), m.end(), m.pattern().as_usize()))
        .collect();
    hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut out: Vec<Match> = Vec::new();
    let mut cursor = 0;
    for (start, end, pid) in hits {
        if start < cursor {
            continue;
        }
        let e = &lexicon.entries[pid];
        out.push(Match {
            pattern: e.pattern.clone(),
            start,
            end,
            action: e.action,
            category: e.category.clone(),
        });
        cursor = end;
    }
    out
}

fn is_closing_punct(c: char) -> bool {
    matches!(c, ',' | '.' | '!' | '?' | ';' | ':' | ')')
}

/// Apply each match's action. Removal also drops the whitespace the removed
/// phrase leaves doubled or stranded before punctuation.
pub fn apply_matches(text: &str, matches: &[Match], lexicon: &Lexicon, removal_only: bool) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev = 0;
    for m in matches {
        out.push_str(&text[prev..m.start]);
        prev = m.end;
        let replacement = if removal_only {
            None
        } else {
            lexicon
                .entries
                .iter()
                .find(|e| e.pattern == m.pattern)
                .and_then(|e| (e.action == Action::Replace).then(|| e.replacement.clone()).flatten())
        };
        match replacement {
            Some(r) => out.push_str(&r),
            None => {
                let next = text[m.end..].chars().next();
                let ws_after = text[m.end..].len() - text[m.end..].trim_start().len();
                if out.is_empty() || out.ends_with(char::is_whitespace) && out.trim().is_empty() {
                    // at the start of the text: drop what follows instead
                    out.clear();
                    prev = m.end + ws_after;
                } else if out.ends_with(char::is_whitespace)
                    && next.is_none_or(|c| c.is_whitespace() || is_closing_punct(c))
                {
                    let kept = out.trim_end().len();
                    out.truncate(kept);
                }
            }
        }
    }
    out.push_str(&text[prev..]);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedMatch {
    pub pattern: String,
    pub start: usize,
    pub end: usize,
    pub action: Action,
    pub category: String,
    /// Pass in which the match was found; offsets refer to that pass's input.
    pub pass: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurificationReport {
    pub matches: Vec<ReportedMatch>,
    pub count_before: usize,
    pub count_after: usize,
    /// Sentences a backend rewrote before the deterministic pass.
    #[serde(default)]
    pub rewritten_sentences: usize,
}

impl PurificationReport {
    pub fn is_empty(&self) -> bool {
        self.count_before == 0
    }
}

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') && bytes.get(i + 1).is_some_and(|b| b.is_ascii_whitespace()) {
            out.push(&text[start..=i]);
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn backend_rewrite(text: &str, lexicon: &Lexicon, backend: &dyn ModelBackend) -> (String, usize) {
    let mut out = String::with_capacity(text.len());
    let mut rewritten = 0;
    for sentence in split_sentences(text) {
        let flagged: Vec<(String, String)> = detect_prohibited(sentence, lexicon)
            .into_iter()
            .map(|m| (sentence[m.start..m.end].to_string(), m.category))
            .collect();
        if flagged.is_empty() {
            out.push_str(sentence);
            continue;
        }
        let lead = &sentence[..sentence.len() - sentence.trim_start().len()];
        match backend.rewrite(&RewritePrompt {
            sentence: sentence.trim(),
            flagged: &flagged,
        }) {
            Ok(new) if !new.trim().is_empty() => {
                out.push_str(lead);
                out.push_str(new.trim());
                rewritten += usize::from(new.trim() != sentence.trim());
            }
            Ok(_) => out.push_str(sentence),
            Err(e) => {
                tracing::warn!(error = %e, "rewrite failed; keeping sentence for the deterministic pass");
                out.push_str(sentence);
            }
        }
    }
    (out, rewritten)
}

/// Remove or replace every prohibited term.
///
/// A backend, when given, rewrites flagged sentences first. The deterministic
/// pass always runs last and repeats until no match remains, so the result
/// never contains a whole-word occurrence of any pattern.
pub fn purify(text: &str, lexicon: &Lexicon, backend: Option<&dyn ModelBackend>) -> (String, PurificationReport) {
    let initial = detect_prohibited(text, lexicon);
    if initial.is_empty() {
        return (text.to_string(), PurificationReport::default());
    }
    let mut report = PurificationReport {
        count_before: initial.len(),
        ..PurificationReport::default()
    };
    let mut current = match backend {
        Some(b) => {
            let (t, n) = backend_rewrite(text, lexicon, b);
            report.rewritten_sentences = n;
            t
        }
        None => text.to_string(),
    };
    let mut pass = 0;
    loop {
        let found = detect_prohibited(&current, lexicon);
        if found.is_empty() {
            break;
        }
        // removal strictly shrinks the text, so the fallback terminates
        let removal_only = pass >= MAX_PASSES;
        report.matches.extend(found.iter().map(|m| ReportedMatch {
            pattern: m.pattern.clone(),
            start: m.start,
            end: m.end,
            action: if removal_only { Action::Remove } else { m.action },
            category: m.category.clone(),
            pass,
        }));
        current = apply_matches(&current, &found, lexicon, removal_only);
        pass += 1;
    }
    report.count_after = detect_prohibited(&current, lexicon).len();
    (current, report)
}
