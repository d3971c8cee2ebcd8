//! Deterministic test double for [`ModelBackend`].
//!
//! Contracts, all pure functions of the prompt and the seed:
//!
//! * `read_click` resolves the click geometrically against the prompt's layout
//!   and echoes the message text; a seeded fraction of clicks is garbled.
//! * `answer` looks the question up in an optional answer key, then matches
//!   its keywords against record fields, memory captions and supplementary
//!   text; with no match it answers [`FALLBACK_ANSWER`].
//! * `integrate` extracts `name:` / `price:` / `spec:` / `feature:` /
//!   `service:` markers (streamer materials first) and drops duplicates.
//! * `write_copy` fills a fixed template per style; an exemplar adds a
//!   `[style <fingerprint>]` prefix.
//! * `rewrite` returns the sentence unchanged.
//! * `caption` is `host shows the product ... in frames S to E`; a continuation
//!   keeps the prefix and appends the fresh caption's tokens past it.
//! * `score_caption` gives -2.0 to tokens containing a digit and -0.1 to the
//!   rest, unless a trace was scripted for that caption.
//! * `judge` is whitespace-normalised exact match.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    AnswerPrompt, BackendError, CaptionPrompt, ClickPrompt, CopyDraft, CopyPrompt, IntegrationPrompt,
    JudgePrompt, ModelBackend, RewritePrompt,
};
use crate::clickqa::resolve_click_within;
use crate::kea::{trace_from_pairs, TokenScore};
use crate::offline::{field_markers, CopyStyle, FieldMarker};
use crate::ses::EventSegment;
use crate::text::{keywords, normalize_whitespace, same_text};

/// Answer returned when nothing in the context matches the question.
pub const FALLBACK_ANSWER: &str = "not specified";

const CONFIDENT: f64 = -0.1;
const UNSURE: f64 = -2.0;

#[derive(Debug, Default)]
pub struct MockBackend {
    seed: u64,
    latency: Duration,
    corruption_rate: f64,
    unreachable: bool,
    answer_key: HashMap<String, String>,
    traces: HashMap<String, Vec<f64>>,
    calls: AtomicU64,
    corrupted: AtomicU64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn answer_key_norm(q: &str) -> String {
    normalize_whitespace(q).to_lowercase()
}

/// Short stable fingerprint of a style exemplar.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_corruption(mut self, rate: f64) -> Self {
        self.corruption_rate = rate;
        self
    }

    /// Every call fails with a transport error.
    pub fn unreachable(mut self) -> Self {
        self.unreachable = true;
        self
    }

    pub fn with_answer_key<Q, A>(mut self, pairs: impl IntoIterator<Item = (Q, A)>) -> Self
    where
        Q: AsRef<str>,
        A: Into<String>,
    {
        for (q, a) in pairs {
            self.answer_key.insert(answer_key_norm(q.as_ref()), a.into());
        }
        self
    }

    /// Script the trace `score_caption` returns for `caption`.
    pub fn with_trace(mut self, caption: impl Into<String>, log_probs: Vec<f64>) -> Self {
        self.traces.insert(caption.into(), log_probs);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn corrupted_count(&self) -> u64 {
        self.corrupted.load(Ordering::Relaxed)
    }

    /// Whether the click at `(frame_id, x, y)` is on the garbling schedule.
    pub fn corrupts(&self, frame_id: u64, x: u32, y: u32) -> bool {
        if self.corruption_rate <= 0.0 {
            return false;
        }
        let mut h = splitmix64(self.seed);
        for v in [frame_id, u64::from(x), u64::from(y)] {
            h = splitmix64(h ^ v);
        }
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        u < self.corruption_rate
    }

    /// Fresh caption text for a segment.
    pub fn fresh_caption(segment: &EventSegment) -> String {
        format!(
            "the host shows the product to the audience in frames {} to {}",
            segment.start_frame, segment.end_frame
        )
    }

    fn enter(&self) -> Result<(), BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if self.unreachable {
            return Err(BackendError::Transport("mock backend configured unreachable".into()));
        }
        Ok(())
    }
}

fn overlaps(question: &[String], text: &str) -> bool {
    let other = keywords(text);
    question.iter().any(|k| other.contains(k))
}

impl ModelBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn read_click(&self, prompt: &ClickPrompt<'_>) -> Result<String, BackendError> {
        self.enter()?;
        let layout = prompt
            .layout
            .ok_or_else(|| BackendError::Unsupported("mock backend needs the frame layout".into()))?;
        let text = match resolve_click_within(layout, &prompt.click, prompt.near_miss_radius) {
            Ok(msg) => msg.text.clone(),
            // A real model would still say something; an empty reply surfaces
            // as an extraction error upstream.
            Err(_) => String::new(),
        };
        if !text.is_empty() && self.corrupts(prompt.frame_id, prompt.click.x, prompt.click.y) {
            self.corrupted.fetch_add(1, Ordering::Relaxed);
            return Ok(format!("{text} [unclear]"));
        }
        Ok(text)
    }

    fn answer(&self, prompt: &AnswerPrompt<'_>) -> Result<String, BackendError> {
        self.enter()?;
        if let Some(a) = self.answer_key.get(&answer_key_norm(prompt.question)) {
            return Ok(a.clone());
        }
        let ks = keywords(prompt.question);
        let mut facts: Vec<String> = Vec::new();
        if let Some(r) = prompt.record {
            if overlaps(&ks, "name product called") {
                facts.push(format!("It is the {}", r.name));
            }
            if overlaps(&ks, "price cost cheap expensive") {
                facts.push(format!("The price is {}", r.price));
            }
            for s in &r.specifications {
                if overlaps(&ks, &s.key) || overlaps(&ks, &s.value) {
                    facts.push(format!("{}: {}", s.key, s.value));
                }
            }
            for f in r.key_features.iter().chain(&r.service_details) {
                if overlaps(&ks, f) {
                    facts.push(f.clone());
                }
            }
        }
        for e in prompt.memory {
            if overlaps(&ks, &e.caption) {
                facts.push(format!("Earlier in the stream: {}", e.caption));
            }
        }
        if let Some(s) = prompt.supplementary {
            facts.push(s.to_string());
        }
        if facts.is_empty() {
            Ok(FALLBACK_ANSWER.to_string())
        } else {
            Ok(facts.join("; "))
        }
    }

    fn integrate(&self, prompt: &IntegrationPrompt<'_>) -> Result<String, BackendError> {
        self.enter()?;
        let mut name: Option<String> = None;
        let mut price: Option<String> = None;
        let mut specs: Vec<(String, String)> = Vec::new();
        let mut features: Vec<String> = Vec::new();
        let mut services: Vec<String> = Vec::new();
        for text in prompt.user.iter().chain(prompt.external) {
            for marker in field_markers(text) {
                match marker {
                    FieldMarker::Name(v) => {
                        name.get_or_insert(v);
                    }
                    FieldMarker::Price(v) => {
                        price.get_or_insert(v);
                    }
                    FieldMarker::Spec(k, v) => {
                        if !specs.iter().any(|(k2, v2)| *k2 == k && *v2 == v) {
                            specs.push((k, v));
                        }
                    }
                    FieldMarker::Feature(v) => {
                        if !features.contains(&v) {
                            features.push(v);
                        }
                    }
                    FieldMarker::Service(v) => {
                        if !services.contains(&v) {
                            services.push(v);
                        }
                    }
                }
            }
        }
        if name.is_none() {
            name = prompt.product_hint.map(str::to_string);
        }
        let out = json!({
            "name": name.unwrap_or_default(),
            "price": price.unwrap_or_default(),
            "specifications": specs
                .into_iter()
                .map(|(k, v)| json!({"key": k, "value": v}))
                .collect::<Vec<_>>(),
            "key_features": features,
            "service_details": services,
        });
        Ok(out.to_string())
    }

    fn write_copy(&self, prompt: &CopyPrompt<'_>) -> Result<CopyDraft, BackendError> {
        self.enter()?;
        let r = prompt.record;
        let features = if r.key_features.is_empty() {
            "made for everyday use".to_string()
        } else {
            r.key_features.join(", ")
        };
        let (body, phrases) = match prompt.style {
            CopyStyle::General => (
                format!(
                    "Say hello to the {}! {}. Picture it in your kitchen on a busy morning, saving you \
                     time when you need it most. All this for just {}.",
                    r.name, features, r.price
                ),
                vec![
                    "Tap the cart below to grab yours!",
                    "Type 1 in the chat if you want the link!",
                    "Ask me anything about it in the comments!",
                ],
            ),
            CopyStyle::Literary => (
                format!(
                    "Remember the slow weekend mornings at home, when everything felt unhurried? The {} \
                     brings that feeling back: {}. A small everyday comfort, yours for {}.",
                    r.name, features, r.price
                ),
                vec![
                    "Tell me which morning ritual you would share it with!",
                    "Leave a heart if this brings back memories!",
                    "The link is waiting for you below.",
                ],
            ),
            CopyStyle::Professional => {
                let specs = r
                    .specifications
                    .iter()
                    .map(|s| format!("{} {}", s.key, s.value))
                    .collect::<Vec<_>>()
                    .join(", ");
                (
                    format!(
                        "{}. Specifications: {}. Highlights: {}. Service: {}. Price: {}.",
                        r.name,
                        if specs.is_empty() { "see listing".into() } else { specs },
                        features,
                        if r.service_details.is_empty() {
                            "standard platform protection".into()
                        } else {
                            r.service_details.join(", ")
                        },
                        r.price
                    ),
                    vec![
                        "Questions about the specifications? Drop them in the chat.",
                        "Compare it with your current model and tell me what you think.",
                        "The listing below has the full parameter sheet.",
                    ],
                )
            }
        };
        let body = match prompt.exemplar {
            Some(ex) => format!("[style {}] {}", fingerprint(ex), body),
            None => body,
        };
        Ok(CopyDraft {
            body,
            interaction_phrases: phrases.into_iter().map(str::to_string).collect(),
        })
    }

    fn rewrite(&self, prompt: &RewritePrompt<'_>) -> Result<String, BackendError> {
        self.enter()?;
        Ok(prompt.sentence.to_string())
    }

    fn caption(&self, prompt: &CaptionPrompt<'_>) -> Result<String, BackendError> {
        self.enter()?;
        let fresh = Self::fresh_caption(prompt.segment);
        let Some(prefix) = prompt.prefix else {
            return Ok(fresh);
        };
        let mut tokens: Vec<&str> = prefix.iter().map(String::as_str).collect();
        tokens.extend(fresh.split_whitespace().skip(prefix.len()));
        Ok(tokens.join(" "))
    }

    fn score_caption(&self, caption: &str) -> Result<Vec<TokenScore>, BackendError> {
        self.enter()?;
        let tokens: Vec<&str> = caption.split_whitespace().collect();
        if let Some(scripted) = self.traces.get(caption) {
            if scripted.len() != tokens.len() {
                return Err(BackendError::InvalidResponse(format!(
                    "scripted trace has {} scores for {} tokens",
                    scripted.len(),
                    tokens.len()
                )));
            }
            return Ok(trace_from_pairs(tokens.into_iter().zip(scripted.iter().copied())));
        }
        Ok(trace_from_pairs(tokens.into_iter().map(|t| {
            let lp = if t.chars().any(|c| c.is_ascii_digit()) { UNSURE } else { CONFIDENT };
            (t, lp)
        })))
    }

    fn judge(&self, prompt: &JudgePrompt<'_>) -> Result<bool, BackendError> {
        self.enter()?;
        Ok(same_text(prompt.predicted, prompt.gold))
    }
}
