use std::collections::BTreeSet;

use image::RgbaImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{compose_visual_prompt, render_overlay, ClickError, ClickEvent, CursorIcon, FrameOverlay};
use crate::backend::{AnswerPrompt, BackendError, ClickPrompt, ModelBackend, FALLBACK_ANSWER};
use crate::memory::MemoryEntry;
use crate::offline::{purify, Lexicon, ProductRecord, PurificationReport};
use crate::text::{keywords, same_text};

#[derive(Debug, Error)]
pub enum QaError {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("model returned an empty transcription for click ({x}, {y})")]
    EmptyTranscription { x: u32, y: u32 },
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Click(#[from] ClickError),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("retriever unavailable: {0}")]
    Unavailable(String),
}

/// Source of supplementary context for questions the record cannot answer.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, question: &str) -> Result<Option<String>, RetrievalError>;
}

/// Fixed corpus of snippets; returns the snippet sharing the most keywords
/// with the question (earliest on ties).
#[derive(Debug, Clone, Default)]
pub struct FixtureRetriever {
    corpus: Vec<(Vec<String>, String)>,
    failing: bool,
}

impl FixtureRetriever {
    pub fn new<S: Into<String>>(snippets: impl IntoIterator<Item = S>) -> Self {
        let corpus = snippets
            .into_iter()
            .map(|s| {
                let s = s.into();
                (keywords(&s), s)
            })
            .collect();
        Self { corpus, failing: false }
    }

    /// Every lookup fails.
    pub fn failing() -> Self {
        Self {
            corpus: Vec::new(),
            failing: true,
        }
    }
}

impl Retriever for FixtureRetriever {
    fn retrieve(&self, question: &str) -> Result<Option<String>, RetrievalError> {
        if self.failing {
            return Err(RetrievalError::Unavailable("fixture retriever configured to fail".into()));
        }
        let q = keywords(question);
        let mut best: Option<(usize, &str)> = None;
        for (ks, snippet) in &self.corpus {
            let hits = q.iter().filter(|k| ks.contains(k)).count();
            if hits > 0 && best.is_none_or(|(b, _)| hits > b) {
                best = Some((hits, snippet));
            }
        }
        Ok(best.map(|(_, s)| s.to_string()))
    }
}

/// Transcribe the clicked message.
///
/// With a frame, the cursor is composited at the click before the frame is
/// sent. `layout` is forwarded for backends that read geometry directly.
pub fn extract_question(
    backend: &dyn ModelBackend,
    frame: Option<&RgbaImage>,
    layout: Option<&FrameOverlay>,
    click: &ClickEvent,
    cursor: &CursorIcon,
    near_miss_radius: f64,
) -> Result<String, QaError> {
    let prompted = frame.map(|f| compose_visual_prompt(f, click, cursor)).transpose()?;
    let text = backend.read_click(&ClickPrompt {
        frame_id: click.frame_id,
        click: *click,
        image: prompted.as_ref(),
        layout,
        near_miss_radius,
    })?;
    let text = text.trim();
    if text.is_empty() {
        return Err(QaError::EmptyTranscription { x: click.x, y: click.y });
    }
    Ok(text.to_string())
}

pub fn answer_question(
    backend: &dyn ModelBackend,
    question: &str,
    record: Option<&ProductRecord>,
    memory: &[MemoryEntry],
    supplementary: Option<&str>,
) -> Result<String, QaError> {
    if question.trim().is_empty() {
        return Err(QaError::EmptyQuestion);
    }
    Ok(backend.answer(&AnswerPrompt {
        question,
        record,
        memory,
        supplementary,
    })?)
}

fn record_keywords(record: &ProductRecord) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = keywords("name price").into_iter().collect();
    let mut add = |s: &str| out.extend(keywords(s));
    add(&record.name);
    add(&record.price);
    for s in &record.specifications {
        add(&s.key);
        add(&s.value);
    }
    for f in record.key_features.iter().chain(&record.service_details) {
        add(f);
    }
    out
}

/// Supplementary context, fetched only when the draft is the fallback answer
/// or no record field shares a keyword with the question. Retriever failures
/// degrade to no context.
pub fn maybe_retrieve(
    question: &str,
    draft_answer: &str,
    record: Option<&ProductRecord>,
    retriever: &dyn Retriever,
) -> Option<String> {
    let uncovered = match record {
        Some(r) => {
            let fields = record_keywords(r);
            !keywords(question).iter().any(|k| fields.contains(k))
        }
        None => true,
    };
    if !same_text(draft_answer, FALLBACK_ANSWER) && !uncovered {
        return None;
    }
    match retriever.retrieve(question) {
        Ok(found) => found,
        Err(e) => {
            tracing::warn!(error = %e, "supplementary retrieval failed; answering without it");
            None
        }
    }
}

/// Everything the click path reads. All of it is immutable during a request.
pub struct ClickContext<'a> {
    pub backend: &'a dyn ModelBackend,
    pub overlay: &'a FrameOverlay,
    /// Frame pixels; when absent and `visual_prompt` is set, the overlay is rendered.
    pub frame: Option<&'a RgbaImage>,
    pub record: Option<&'a ProductRecord>,
    pub memory: &'a [MemoryEntry],
    pub retriever: Option<&'a dyn Retriever>,
    pub lexicon: &'a Lexicon,
    pub cursor: &'a CursorIcon,
    pub visual_prompt: bool,
    pub near_miss_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickResponse {
    /// Transcription as returned by the model.
    pub question_raw: String,
    /// Transcription after purification; this is what clients see.
    pub question: String,
    pub answer: String,
    /// What purification removed from the answer.
    pub purification_report: PurificationReport,
    /// What purification removed from the transcribed question.
    pub question_report: PurificationReport,
    pub retrieved: bool,
}

/// Click to purified answer: transcribe, answer, optionally retrieve and
/// re-answer, then purify.
pub fn respond_to_click(ctx: &ClickContext<'_>, click: &ClickEvent) -> Result<ClickResponse, QaError> {
    ctx.overlay.validate()?;
    if click.x >= ctx.overlay.width || click.y >= ctx.overlay.height {
        return Err(ClickError::OutOfBounds {
            x: click.x,
            y: click.y,
            width: ctx.overlay.width,
            height: ctx.overlay.height,
        }
        .into());
    }
    let rendered;
    let frame = match (ctx.frame, ctx.visual_prompt) {
        (Some(f), true) => Some(f),
        (None, true) => {
            rendered = render_overlay(ctx.overlay);
            Some(&rendered)
        }
        (_, false) => None,
    };
    let question = extract_question(ctx.backend, frame, Some(ctx.overlay), click, ctx.cursor, ctx.near_miss_radius)?;
    let mut answer = answer_question(ctx.backend, &question, ctx.record, ctx.memory, None)?;
    let mut retrieved = false;
    if let Some(retriever) = ctx.retriever {
        if let Some(extra) = maybe_retrieve(&question, &answer, ctx.record, retriever) {
            answer = answer_question(ctx.backend, &question, ctx.record, ctx.memory, Some(&extra))?;
            retrieved = true;
        }
    }
    let (clean_question, question_report) = purify(&question, ctx.lexicon, None);
    let (clean_answer, report) = purify(&answer, ctx.lexicon, None);
    Ok(ClickResponse {
        question_raw: question,
        question: clean_question,
        answer: clean_answer,
        purification_report: report,
        question_report,
        retrieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::clickqa::{BulletMessage, NEAR_MISS_RADIUS};
    use crate::memory::{CaptionSource, MemoryEntry};
    use crate::offline::{LexiconEntry, Spec};
    use crate::ses::EventSegment;

    fn overlay() -> FrameOverlay {
        FrameOverlay {
            frame_id: 3,
            width: 320,
            height: 200,
            messages: vec![
                BulletMessage::new("m0", "Is it waterproof?", (40, 10, 200, 30)),
                BulletMessage::new("m1", "price?", (40, 100, 100, 120)),
            ],
        }
    }

    fn record() -> ProductRecord {
        ProductRecord {
            product_id: "p1".into(),
            name: "AquaBot Kettle".into(),
            price: "$39.99".into(),
            specifications: vec![Spec::new("capacity", "1.7 L")],
            key_features: vec!["auto shut-off".into()],
            service_details: vec!["two-year warranty".into()],
            ..ProductRecord::default()
        }
    }

    fn entry(caption: &str) -> MemoryEntry {
        MemoryEntry {
            segment: EventSegment {
                start_frame: 0,
                end_frame: 9,
                confirmed_at_frame: 12,
                start_time: 0.0,
                end_time: 0.3,
            },
            caption: caption.into(),
            caption_source: CaptionSource::Fresh,
            created_at: 0.3,
            needs_retry: false,
        }
    }

    #[test]
    fn mock_transcribes_clicked_message() {
        let mock = MockBackend::new(1);
        let ov = overlay();
        let frame = render_overlay(&ov);
        let q = extract_question(&mock, Some(&frame), Some(&ov), &ClickEvent::new(3, 60, 20), &CursorIcon::arrow(), NEAR_MISS_RADIUS)
            .unwrap();
        assert_eq!(q, "Is it waterproof?");
    }

    #[test]
    fn miss_is_extraction_error() {
        let mock = MockBackend::new(1);
        let ov = overlay();
        let err = extract_question(&mock, None, Some(&ov), &ClickEvent::new(3, 300, 190), &CursorIcon::arrow(), NEAR_MISS_RADIUS)
            .unwrap_err();
        assert!(matches!(err, QaError::EmptyTranscription { .. }));
    }

    #[test]
    fn unreachable_backend_is_transport_error() {
        let mock = MockBackend::new(1).unreachable();
        let ov = overlay();
        let err = extract_question(&mock, None, Some(&ov), &ClickEvent::new(3, 60, 20), &CursorIcon::arrow(), NEAR_MISS_RADIUS)
            .unwrap_err();
        assert!(matches!(err, QaError::Backend(BackendError::Transport(_))));
    }

    #[test]
    fn answers_from_record_and_memory() {
        let mock = MockBackend::new(1);
        let r = record();
        let a = answer_question(&mock, "price?", Some(&r), &[], None).unwrap();
        assert!(a.contains("$39.99"));
        let a = answer_question(&mock, "what colour is the lid?", Some(&r), &[], None).unwrap();
        assert_eq!(a, FALLBACK_ANSWER);
        let mem = [entry("demonstrated waterproof test")];
        let a = answer_question(&mock, "was it tested?", Some(&r), &mem, None).unwrap();
        assert!(a.contains("demonstrated waterproof test"));
        assert!(matches!(answer_question(&mock, "  ", Some(&r), &[], None), Err(QaError::EmptyQuestion)));
    }

    #[test]
    fn retrieval_trigger() {
        let r = record();
        let fixture = FixtureRetriever::new([
            "The kettle base is made of stainless steel.",
            "Battery life is twelve hours on a full charge.",
        ]);
        let got = maybe_retrieve("battery life?", "not specified", Some(&r), &fixture);
        assert_eq!(got.as_deref(), Some("Battery life is twelve hours on a full charge."));
        // keyword overlap with the record and a real draft: nothing fetched
        assert_eq!(maybe_retrieve("price?", "The price is $39.99", Some(&r), &fixture), None);
        // fallback draft always triggers
        assert!(maybe_retrieve("price of the battery?", "not specified", Some(&r), &fixture).is_some());
        // failure degrades to nothing
        assert_eq!(maybe_retrieve("battery?", "not specified", Some(&r), &FixtureRetriever::failing()), None);
    }

    #[test]
    fn full_click_path_purifies() {
        let mock = MockBackend::new(1).with_answer_key([("Is it waterproof?", "It is the best kettle, fully waterproof.")]);
        let ov = overlay();
        let r = record();
        let lexicon = Lexicon::new(vec![LexiconEntry::remove("best", "absolute claim")]).unwrap();
        let cursor = CursorIcon::arrow();
        let ctx = ClickContext {
            backend: &mock,
            overlay: &ov,
            frame: None,
            record: Some(&r),
            memory: &[],
            retriever: None,
            lexicon: &lexicon,
            cursor: &cursor,
            visual_prompt: true,
            near_miss_radius: NEAR_MISS_RADIUS,
        };
        let resp = respond_to_click(&ctx, &ClickEvent::new(3, 60, 20)).unwrap();
        assert_eq!(resp.question, "Is it waterproof?");
        assert_eq!(resp.answer, "It is the kettle, fully waterproof.");
        assert_eq!(resp.purification_report.count_before, 1);
        assert_eq!(resp.purification_report.count_after, 0);
    }

    #[test]
    fn click_path_uses_retrieval() {
        let mock = MockBackend::new(1);
        let ov = FrameOverlay {
            frame_id: 3,
            width: 320,
            height: 200,
            messages: vec![BulletMessage::new("m0", "battery life?", (40, 10, 200, 30))],
        };
        let r = record();
        let lexicon = Lexicon::default();
        let fixture = FixtureRetriever::new(["Battery life is twelve hours on a full charge."]);
        let cursor = CursorIcon::arrow();
        let ctx = ClickContext {
            backend: &mock,
            overlay: &ov,
            frame: None,
            record: Some(&r),
            memory: &[],
            retriever: Some(&fixture),
            lexicon: &lexicon,
            cursor: &cursor,
            visual_prompt: false,
            near_miss_radius: NEAR_MISS_RADIUS,
        };
        let resp = respond_to_click(&ctx, &ClickEvent::new(3, 60, 20)).unwrap();
        assert!(resp.retrieved);
        assert!(resp.answer.contains("twelve hours"));
    }
}
