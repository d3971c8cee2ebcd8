#![allow(dead_code)]

use serde_json::Value;
use streamdesk_core::offline::{detect_prohibited, Lexicon};

/// Keys whose values describe what the purifier removed and so legitimately
/// contain lexicon patterns.
const REPORT_KEYS: &[&str] = &["purification_report", "question_report", "body_report", "phrase_reports", "report"];

fn collect<'a>(v: &'a Value, out: &mut Vec<&'a str>) {
    match v {
        Value::String(s) => out.push(s),
        Value::Array(a) => a.iter().for_each(|x| collect(x, out)),
        Value::Object(m) => {
            for (k, x) in m {
                if !REPORT_KEYS.contains(&k.as_str()) {
                    collect(x, out);
                }
            }
        }
        _ => {}
    }
}

/// Client-visible strings of a JSON document, report payloads excluded.
pub fn visible_strings(v: &Value) -> Vec<&str> {
    let mut out = Vec::new();
    collect(v, &mut out);
    out
}

/// Lexicon hits across every line of a JSONL transcript.
pub fn lexicon_hits(jsonl: &str, lexicon: &Lexicon) -> Vec<String> {
    let mut hits = Vec::new();
    for line in jsonl.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).expect("transcript line is JSON");
        for s in visible_strings(&v) {
            for m in detect_prohibited(s, lexicon) {
                hits.push(format!("{:?} in {s:?}", &s[m.start..m.end]));
            }
        }
    }
    hits
}
