//! Replay a [`Scenario`] against an in-process [`Engine`] and record what a
//! client would have seen.
//!
//! The transcript holds no wall-clock data, so one scenario with one seed
//! always produces the same bytes. Before each timed event the simulator
//! waits for the history worker to drain its queue, which makes segment
//! emission independent of thread scheduling.

use std::io::Write;

use serde::Serialize;
use streamdesk_core::backend::BackendKind;
use streamdesk_core::clickqa::{reward, JudgeError, JudgeKind};
use streamdesk_core::memory::CaptionSource;
use streamdesk_core::offline::{purify, Copy, ProductRecord, PurificationReport};
use thiserror::Error;

use crate::api::{ClickRequest, CopyRequest, FramesRequest, ProductRequest, SessionRequest};
use crate::config::Config;
use crate::engine::{Engine, EngineError};
use crate::scenario::{Action, Scenario};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("temporary storage: {0}")]
    Storage(std::io::Error),
    #[error("{stage}: {source}")]
    Engine {
        stage: &'static str,
        #[source]
        source: EngineError,
    },
    #[error("judging click at scenario line {line}: {source}")]
    Judge {
        line: usize,
        #[source]
        source: JudgeError,
    },
    #[error("writing transcript: {0}")]
    Write(#[from] std::io::Error),
}

fn at(stage: &'static str) -> impl FnOnce(EngineError) -> SimulationError {
    move |source| SimulationError::Engine { stage, source }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationMetrics {
    pub clicks: usize,
    /// Clicks carrying a gold question.
    pub labelled: usize,
    pub qra: f64,
    /// Judge acceptance over clicks carrying both gold fields.
    pub rq: f64,
    pub mean_reward: f64,
    pub judge: JudgeKind,
    pub segments: usize,
    pub boundaries: Vec<u64>,
    pub prefix_reuse_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Header {
        name: String,
        seed: Option<u64>,
        backend: BackendKind,
        frames: usize,
        events: usize,
    },
    Product {
        record: ProductRecord,
        purified_fields: Vec<String>,
    },
    Overlay {
        at_frame: u64,
        frame_id: u64,
        messages: usize,
    },
    Segment {
        index: usize,
        start_frame: u64,
        end_frame: u64,
        start_time: f64,
        end_time: f64,
        caption: String,
        caption_source: CaptionSource,
        needs_retry: bool,
        purification_report: PurificationReport,
    },
    Exchange {
        at_frame: u64,
        frame_id: u64,
        x: u32,
        y: u32,
        message_id: String,
        question: String,
        answer: String,
        retrieved: bool,
        purification_report: PurificationReport,
        question_report: PurificationReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        question_gold: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        answer_gold: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        recognised: Option<bool>,
        #[serde(skip_serializing_if = "Option::is_none")]
        reward: Option<f64>,
    },
    ClickError {
        at_frame: u64,
        x: u32,
        y: u32,
        error: String,
        message: String,
    },
    Copy {
        at_frame: u64,
        copy: Copy,
        body_report: PurificationReport,
        phrase_reports: Vec<PurificationReport>,
    },
    Purify {
        at_frame: u64,
        text: String,
        purification_report: PurificationReport,
    },
    Metrics(SimulationMetrics),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub transcript: Vec<TranscriptEvent>,
    pub metrics: SimulationMetrics,
}

impl SimulationReport {
    pub fn write_transcript<W: Write>(&self, mut w: W) -> Result<(), SimulationError> {
        for e in &self.transcript {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn transcript_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_transcript(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn boundary_count(&self) -> usize {
        self.metrics.boundaries.len()
    }
}

#[derive(Default)]
struct Tally {
    clicks: usize,
    labelled: usize,
    recognised: usize,
    judged: usize,
    accepted: usize,
    reward: f64,
}

struct Replay<'a> {
    engine: &'a Engine,
    session: String,
    transcript: Vec<TranscriptEvent>,
    emitted: usize,
    tally: Tally,
}

impl Replay<'_> {
    /// Drain the worker, then record entries that appeared since last time.
    fn emit_segments(&mut self) -> Result<(), SimulationError> {
        self.engine.wait_idle(&self.session).map_err(at("waiting for history"))?;
        self.collect_segments()
    }

    fn collect_segments(&mut self) -> Result<(), SimulationError> {
        let session = self.engine.session(&self.session).map_err(at("session"))?;
        let snap = session.memory().snapshot();
        for (index, e) in snap.entries().iter().enumerate().skip(self.emitted) {
            let (caption, report) = purify(&e.caption, self.engine.lexicon(), None);
            self.transcript.push(TranscriptEvent::Segment {
                index,
                start_frame: e.segment.start_frame,
                end_frame: e.segment.end_frame,
                start_time: e.segment.start_time,
                end_time: e.segment.end_time,
                caption,
                caption_source: e.caption_source,
                needs_retry: e.needs_retry,
                purification_report: report,
            });
        }
        self.emitted = snap.entries().len();
        Ok(())
    }

    fn click(
        &mut self,
        line: usize,
        at_frame: u64,
        req: ClickRequest,
        question_gold: Option<String>,
        answer_gold: Option<String>,
    ) -> Result<(), SimulationError> {
        self.tally.clicks += 1;
        let labelled = question_gold.as_deref().is_some_and(|q| !q.trim().is_empty());
        let judged = labelled && answer_gold.as_deref().is_some_and(|a| !a.trim().is_empty());
        self.tally.labelled += usize::from(labelled);
        self.tally.judged += usize::from(judged);
        let outcome = match self.engine.click(&self.session, &req) {
            Ok(o) => o,
            Err(e) => {
                // counted as unrecognised and rejected
                self.transcript.push(TranscriptEvent::ClickError {
                    at_frame,
                    x: req.x,
                    y: req.y,
                    error: e.code().to_string(),
                    message: e.to_string(),
                });
                return Ok(());
            }
        };
        let judge = self.engine.judge();
        let mut recognised = None;
        let mut score = None;
        if let Some(q) = question_gold.as_deref().filter(|_| labelled) {
            let ok = streamdesk_core::text::same_text(&outcome.question_raw, q);
            self.tally.recognised += usize::from(ok);
            recognised = Some(ok);
        }
        if let (Some(q), Some(a), true) = (question_gold.as_deref(), answer_gold.as_deref(), judged) {
            let accepted = judge
                .accepts(q, &outcome.reply.answer, a)
                .map_err(|source| SimulationError::Judge { line, source })?;
            self.tally.accepted += usize::from(accepted);
            let r = reward(&outcome.question_raw, &outcome.reply.answer, q, a, judge)
                .map_err(|source| SimulationError::Judge { line, source })?;
            self.tally.reward += r;
            score = Some(r);
        }
        let reply = outcome.reply;
        self.transcript.push(TranscriptEvent::Exchange {
            at_frame,
            frame_id: reply.frame_id,
            x: req.x,
            y: req.y,
            message_id: reply.message_id,
            question: reply.question,
            answer: reply.answer,
            retrieved: reply.retrieved,
            purification_report: reply.purification_report,
            question_report: reply.question_report,
            question_gold,
            answer_gold,
            recognised,
            reward: score,
        });
        Ok(())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Replay `scenario` on a fresh engine built from `config`.
///
/// Records go to a temporary directory. With the mock backend the
/// scenario's seed, when present, replaces the configured one.
pub fn run_simulation(scenario: &Scenario, config: &Config) -> Result<SimulationReport, SimulationError> {
    let storage = tempfile::tempdir().map_err(SimulationError::Storage)?;
    let mut config = config.clone();
    config.storage = storage.path().to_path_buf();
    if config.backend.kind == BackendKind::Mock {
        if let Some(seed) = scenario.seed {
            config.backend.seed = seed;
        }
    }
    let engine = Engine::new(config).map_err(at("building engine"))?;
    let report = replay(scenario, &engine);
    engine.close_all();
    report
}

fn replay(scenario: &Scenario, engine: &Engine) -> Result<SimulationReport, SimulationError> {
    let mut transcript = vec![TranscriptEvent::Header {
        name: scenario.name.clone(),
        seed: scenario.seed,
        backend: engine.config().backend.kind,
        frames: scenario.frames.len(),
        events: scenario.events.len(),
    }];
    let product = engine
        .create_product(&ProductRequest {
            product_id: scenario.product.product_id.clone(),
            materials: scenario.product.materials.clone(),
            external_snippets: scenario.product.external_snippets.clone(),
        })
        .map_err(at("integrating product"))?;
    let product_id = product.record.product_id.clone();
    transcript.push(TranscriptEvent::Product {
        record: product.record,
        purified_fields: product.purified_fields,
    });
    let info = engine
        .create_session(&SessionRequest {
            product_id: product_id.clone(),
            session_id: Some(format!("sim-{}", scenario.name)),
        })
        .map_err(at("opening session"))?;

    let mut rp = Replay {
        engine,
        session: info.session_id,
        transcript,
        emitted: 0,
        tally: Tally::default(),
    };
    let mut next = 0usize;
    let mut feed_until = |rp: &mut Replay<'_>, limit: Option<u64>| -> Result<(), SimulationError> {
        let end = match limit {
            Some(l) => next + scenario.frames[next..].partition_point(|f| f.frame_id <= l),
            None => scenario.frames.len(),
        };
        if end > next {
            let req = FramesRequest {
                frames: scenario.frames[next..end].to_vec(),
            };
            engine.ingest_frames(&rp.session, &req).map_err(at("ingesting frames"))?;
            next = end;
        }
        rp.emit_segments()
    };

    for ev in &scenario.events {
        feed_until(&mut rp, Some(ev.at_frame))?;
        match &ev.action {
            Action::Overlay(ov) => {
                engine
                    .put_overlay(&rp.session, ov.clone())
                    .map_err(at("storing overlay"))?;
                rp.transcript.push(TranscriptEvent::Overlay {
                    at_frame: ev.at_frame,
                    frame_id: ov.frame_id,
                    messages: ov.messages.len(),
                });
            }
            Action::Click {
                frame_id,
                x,
                y,
                question_gold,
                answer_gold,
            } => rp.click(
                ev.line,
                ev.at_frame,
                ClickRequest {
                    frame_id: *frame_id,
                    x: *x,
                    y: *y,
                },
                question_gold.clone(),
                answer_gold.clone(),
            )?,
            Action::Copy { style, exemplar } => {
                let resp = engine
                    .copy(&CopyRequest {
                        product_id: product_id.clone(),
                        style: *style,
                        exemplar: exemplar.clone(),
                    })
                    .map_err(at("writing copy"))?;
                rp.transcript.push(TranscriptEvent::Copy {
                    at_frame: ev.at_frame,
                    copy: resp.copy,
                    body_report: resp.body_report,
                    phrase_reports: resp.phrase_reports,
                });
            }
            Action::Purify(text) => {
                let resp = engine.purify_text(text);
                rp.transcript.push(TranscriptEvent::Purify {
                    at_frame: ev.at_frame,
                    text: resp.text,
                    purification_report: resp.report,
                });
            }
        }
    }
    feed_until(&mut rp, None)?;
    engine.flush(&rp.session).map_err(at("flushing history"))?;
    rp.collect_segments()?;

    let session = engine.session(&rp.session).map_err(at("session"))?;
    let snap = session.memory().snapshot();
    let entries = snap.entries();
    let reused = entries
        .iter()
        .filter(|e| matches!(e.caption_source, CaptionSource::PrefixReused { .. }))
        .count();
    let t = &rp.tally;
    let metrics = SimulationMetrics {
        clicks: t.clicks,
        labelled: t.labelled,
        qra: ratio(t.recognised, t.labelled),
        rq: ratio(t.accepted, t.judged),
        mean_reward: if t.judged == 0 { 0.0 } else { t.reward / t.judged as f64 },
        judge: engine.judge().kind(),
        segments: entries.len(),
        boundaries: entries.iter().skip(1).map(|e| e.segment.start_frame).collect(),
        // the first caption can never reuse a prefix
        prefix_reuse_rate: ratio(reused, entries.len().saturating_sub(1)),
    };
    rp.transcript.push(TranscriptEvent::Metrics(metrics.clone()));
    Ok(SimulationReport {
        transcript: rp.transcript,
        metrics,
    })
}
