//! In-process application state shared by the HTTP layer and the simulator.
//!
//! Every public operation is synchronous and runs on the caller's thread
//! under a [`RequestPathGuard`]; segmentation and captioning happen only on
//! each session's history worker.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use streamdesk_core::backend::{BackendError, ModelBackend};
use streamdesk_core::clickqa::{
    render_overlay, resolve_click_within, respond_to_click, ClickContext, ClickError, ClickEvent, CursorIcon,
    ExactMatchJudge, FixtureRetriever, FrameOverlay, Judge, ModelJudge, QaError, Retriever, RgbaImage,
};
use streamdesk_core::instrument::RequestPathGuard;
use streamdesk_core::memory::{HistoryWorker, MemoryEntry, MemoryError, MemoryStore, SubmitError, WorkerStats};
use streamdesk_core::offline::{
    adapt_style, generate_copy, integrate, purify, CopyError, IntegrateError, Lexicon, LexiconError, ProductRecord,
    RecordStore, StoreError,
};
use streamdesk_core::ses::SesError;
use thiserror::Error;

use crate::api::{
    ClickReply, ClickRequest, CopyRequest, CopyResponse, FramesRequest, FramesResponse, MemoryQuery, MemoryReply,
    ProductRequest, ProductResponse, PurifyResponse, SessionInfo, SessionRequest,
};
use crate::config::{Config, JudgeChoice};

/// Overlays kept per session; older frames are forgotten.
pub const MAX_OVERLAYS: usize = 256;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("product {0:?} not found")]
    ProductNotFound(String),
    #[error("session {0:?} not found")]
    SessionNotFound(String),
    #[error("session {0:?} already exists")]
    SessionExists(String),
    #[error("no overlay for frame {0}")]
    OverlayNotFound(u64),
    #[error("session has no overlay yet")]
    NoOverlay,
    #[error("no message here: {0}")]
    NoMessage(ClickError),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("frame {index} of the batch rejected after {index} accepted: {source}")]
    Frame { index: usize, source: SubmitError },
    #[error(transparent)]
    Click(#[from] QaError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Copy(#[from] CopyError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("backend setup: {0}")]
    Backend(#[from] BackendError),
    #[error("lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("session worker: {0}")]
    Worker(String),
}

/// Coarse error classes, mapped to HTTP statuses by the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    NotFound,
    Conflict,
    Invalid,
    Unprocessable,
    Upstream,
    Internal,
}

impl EngineError {
    pub fn class(&self) -> ErrorClass {
        use EngineError::*;
        match self {
            ProductNotFound(_) | SessionNotFound(_) | OverlayNotFound(_) | NoOverlay => ErrorClass::NotFound,
            SessionExists(_) => ErrorClass::Conflict,
            BadRequest(_) | Frame { .. } | Memory(_) => ErrorClass::Invalid,
            NoMessage(_) => ErrorClass::Unprocessable,
            Click(QaError::Backend(_)) | Integrate(IntegrateError::Backend(_)) | Copy(CopyError::Backend(_)) => {
                ErrorClass::Upstream
            }
            Click(_) | Integrate(_) | Copy(_) => ErrorClass::Unprocessable,
            Store(StoreError::InvalidId(_) | StoreError::InvalidRecord(_)) => ErrorClass::Invalid,
            Store(StoreError::NotFound(_)) => ErrorClass::NotFound,
            Store(_) | Backend(_) | Lexicon(_) | Worker(_) => ErrorClass::Internal,
        }
    }

    /// Stable machine-readable code for error bodies.
    pub fn code(&self) -> &'static str {
        use EngineError::*;
        match self {
            ProductNotFound(_) => "product-not-found",
            SessionNotFound(_) => "session-not-found",
            SessionExists(_) => "session-exists",
            OverlayNotFound(_) | NoOverlay => "overlay-not-found",
            NoMessage(_) => "no-message-here",
            BadRequest(_) => "bad-request",
            Frame { .. } => "frame-rejected",
            Click(QaError::Backend(_)) | Integrate(IntegrateError::Backend(_)) | Copy(CopyError::Backend(_)) => {
                "backend-error"
            }
            Click(_) => "click-failed",
            Integrate(_) => "integration-failed",
            Copy(_) => "copy-failed",
            Store(_) => "storage-error",
            Memory(_) => "memory-query-invalid",
            Backend(_) | Lexicon(_) | Worker(_) => "internal",
        }
    }
}

struct OverlaySlot {
    overlay: FrameOverlay,
    frame: Option<RgbaImage>,
}

#[derive(Default)]
struct Overlays {
    by_frame: BTreeMap<u64, Arc<OverlaySlot>>,
    latest: Option<u64>,
}

pub struct Session {
    pub id: String,
    pub product_id: String,
    info: SessionInfo,
    worker: HistoryWorker,
    memory: Arc<MemoryStore>,
    overlays: RwLock<Overlays>,
}

impl Session {
    pub fn info(&self) -> &SessionInfo {
        &self.info
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.memory
    }

    pub fn stats(&self) -> &WorkerStats {
        self.worker.stats()
    }
}

/// Outcome of a click with the raw transcription kept for scoring.
#[derive(Debug, Clone)]
pub struct ClickOutcome {
    pub reply: ClickReply,
    pub question_raw: String,
}

pub struct Engine {
    config: Config,
    backend: Arc<dyn ModelBackend>,
    judge: Box<dyn Judge>,
    records: RecordStore,
    lexicon: Lexicon,
    retriever: Option<FixtureRetriever>,
    cursor: CursorIcon,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_session: AtomicU64,
}

impl Engine {
    /// Build from config, constructing the backend it names.
    pub fn new(config: Config) -> Result<Self, EngineError> {
        let backend = config.backend.build()?;
        Self::with_backend(config, backend)
    }

    pub fn with_backend(config: Config, backend: Arc<dyn ModelBackend>) -> Result<Self, EngineError> {
        config.validate().map_err(|e| EngineError::BadRequest(e.to_string()))?;
        let records = RecordStore::open(&config.storage).map_err(EngineError::Store)?;
        let lexicon = match &config.lexicon {
            Some(path) => Lexicon::load(path)?,
            None => Lexicon::builtin(),
        };
        let retriever = (!config.retrieval_snippets.is_empty())
            .then(|| FixtureRetriever::new(config.retrieval_snippets.iter().cloned()));
        let judge: Box<dyn Judge> = match config.judge {
            JudgeChoice::Exact => Box::new(ExactMatchJudge),
            JudgeChoice::Model => Box::new(ModelJudge::new(Arc::clone(&backend))),
        };
        Ok(Self {
            config,
            backend,
            judge,
            records,
            lexicon,
            retriever,
            cursor: CursorIcon::arrow(),
            sessions: RwLock::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn backend(&self) -> &Arc<dyn ModelBackend> {
        &self.backend
    }

    pub fn judge(&self) -> &dyn Judge {
        self.judge.as_ref()
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn records(&self) -> &RecordStore {
        &self.records
    }

    fn load_record(&self, id: &str) -> Result<ProductRecord, EngineError> {
        self.records.load(id).map_err(|e| match e {
            StoreError::NotFound(id) => EngineError::ProductNotFound(id),
            other => EngineError::Store(other),
        })
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, EngineError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::SessionNotFound(id.to_string()))
    }

    /// Integrate materials into a record, purify its text fields and save it.
    pub fn create_product(&self, req: &ProductRequest) -> Result<ProductResponse, EngineError> {
        let _guard = RequestPathGuard::enter();
        let mut record = integrate(
            &req.materials,
            &req.external_snippets,
            self.backend.as_ref(),
            req.product_id.as_deref(),
        )?;
        let purified_fields = self.purify_record(&mut record);
        self.records.save(&record).map_err(EngineError::Store)?;
        tracing::info!(product = %record.product_id, "product saved");
        Ok(ProductResponse { record, purified_fields })
    }

    fn purify_record(&self, r: &mut ProductRecord) -> Vec<String> {
        let mut changed = Vec::new();
        let mut clean = |field: &str, s: &mut String| {
            let (out, report) = purify(s, &self.lexicon, None);
            if !report.is_empty() {
                *s = out;
                changed.push(field.to_string());
            }
        };
        clean("name", &mut r.name);
        clean("price", &mut r.price);
        for (i, sp) in r.specifications.iter_mut().enumerate() {
            clean(&format!("specifications[{i}].key"), &mut sp.key);
            clean(&format!("specifications[{i}].value"), &mut sp.value);
        }
        for (i, f) in r.key_features.iter_mut().enumerate() {
            clean(&format!("key_features[{i}]"), f);
        }
        for (i, s) in r.service_details.iter_mut().enumerate() {
            clean(&format!("service_details[{i}]"), s);
        }
        changed
    }

    pub fn get_product(&self, id: &str) -> Result<ProductRecord, EngineError> {
        let _guard = RequestPathGuard::enter();
        self.load_record(id)
    }

    pub fn copy(&self, req: &CopyRequest) -> Result<CopyResponse, EngineError> {
        let _guard = RequestPathGuard::enter();
        let record = self.load_record(&req.product_id)?;
        let mut copy = match &req.exemplar {
            Some(ex) => adapt_style(&record, ex, req.style, self.backend.as_ref())?,
            None => generate_copy(&record, req.style, self.backend.as_ref())?,
        };
        let (body, body_report) = purify(&copy.body, &self.lexicon, None);
        copy.body = body;
        let mut phrase_reports = Vec::with_capacity(copy.interaction_phrases.len());
        for p in &mut copy.interaction_phrases {
            let (clean, report) = purify(p, &self.lexicon, None);
            *p = clean;
            phrase_reports.push(report);
        }
        Ok(CopyResponse {
            copy,
            body_report,
            phrase_reports,
        })
    }

    pub fn purify_text(&self, text: &str) -> PurifyResponse {
        let _guard = RequestPathGuard::enter();
        let (text, report) = purify(text, &self.lexicon, None);
        PurifyResponse { text, report }
    }

    /// Open a live session. The product may be saved later; clicks fail with
    /// product-not-found until it is.
    pub fn create_session(&self, req: &SessionRequest) -> Result<SessionInfo, EngineError> {
        let _guard = RequestPathGuard::enter();
        if req.product_id.trim().is_empty() {
            return Err(EngineError::BadRequest("product_id is empty".into()));
        }
        let mut sessions = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        let id = match &req.session_id {
            Some(id) if id.trim().is_empty() => return Err(EngineError::BadRequest("session_id is empty".into())),
            Some(id) if sessions.contains_key(id) => return Err(EngineError::SessionExists(id.clone())),
            Some(id) => id.clone(),
            None => loop {
                let candidate = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
                if !sessions.contains_key(&candidate) {
                    break candidate;
                }
            },
        };
        let memory = Arc::new(MemoryStore::new());
        let worker = HistoryWorker::spawn(
            self.config.ses,
            self.config.kea,
            Arc::clone(&self.backend),
            Arc::clone(&memory),
        )
        .map_err(|e: SesError| EngineError::BadRequest(e.to_string()))?;
        let info = SessionInfo {
            session_id: id.clone(),
            product_id: req.product_id.clone(),
            ses: self.config.ses,
            kea: self.config.kea,
        };
        sessions.insert(
            id.clone(),
            Arc::new(Session {
                id: id.clone(),
                product_id: req.product_id.clone(),
                info: info.clone(),
                worker,
                memory,
                overlays: RwLock::new(Overlays::default()),
            }),
        );
        tracing::info!(session = %id, product = %req.product_id, "session opened");
        Ok(info)
    }

    /// Queue features for the session's segmenter. Frames are validated here;
    /// segmentation runs in the background.
    pub fn ingest_frames(&self, session_id: &str, req: &FramesRequest) -> Result<FramesResponse, EngineError> {
        let _guard = RequestPathGuard::enter();
        let session = self.session(session_id)?;
        for (index, f) in req.frames.iter().enumerate() {
            session
                .worker
                .submit(*f)
                .map_err(|source| EngineError::Frame { index, source })?;
        }
        Ok(FramesResponse {
            accepted: req.frames.len(),
        })
    }

    pub fn put_overlay(&self, session_id: &str, overlay: FrameOverlay) -> Result<(), EngineError> {
        let _guard = RequestPathGuard::enter();
        let session = self.session(session_id)?;
        overlay.validate().map_err(|e| EngineError::BadRequest(e.to_string()))?;
        let frame = self.config.clickqa.visual_prompt.then(|| render_overlay(&overlay));
        let frame_id = overlay.frame_id;
        let mut slots = session.overlays.write().unwrap_or_else(|p| p.into_inner());
        slots.by_frame.insert(frame_id, Arc::new(OverlaySlot { overlay, frame }));
        if slots.latest.is_none_or(|l| frame_id >= l) {
            slots.latest = Some(frame_id);
        }
        while slots.by_frame.len() > MAX_OVERLAYS {
            slots.by_frame.pop_first();
        }
        Ok(())
    }

    fn overlay_slot(&self, session: &Session, frame_id: Option<u64>) -> Result<Arc<OverlaySlot>, EngineError> {
        let slots = session.overlays.read().unwrap_or_else(|p| p.into_inner());
        let id = match frame_id {
            Some(id) => id,
            None => slots.latest.ok_or(EngineError::NoOverlay)?,
        };
        slots.by_frame.get(&id).cloned().ok_or(EngineError::OverlayNotFound(id))
    }

    /// `None` selects the latest overlay.
    pub fn get_overlay(&self, session_id: &str, frame_id: Option<u64>) -> Result<FrameOverlay, EngineError> {
        let _guard = RequestPathGuard::enter();
        let session = self.session(session_id)?;
        Ok(self.overlay_slot(&session, frame_id)?.overlay.clone())
    }

    /// The full click path: resolve, transcribe, answer, retrieve if needed,
    /// purify. Reads memory through a snapshot; never waits on captioning.
    pub fn click(&self, session_id: &str, req: &ClickRequest) -> Result<ClickOutcome, EngineError> {
        let _guard = RequestPathGuard::enter();
        let session = self.session(session_id)?;
        let record = self.load_record(&session.product_id)?;
        let slot = self.overlay_slot(&session, req.frame_id)?;
        let click = ClickEvent::new(slot.overlay.frame_id, req.x, req.y);
        let message = resolve_click_within(&slot.overlay, &click, self.config.clickqa.near_miss_radius)
            .map_err(|e| match e {
                ClickError::NoMessageAtClick { .. } => EngineError::NoMessage(e),
                other => EngineError::BadRequest(other.to_string()),
            })?;
        let snapshot = session.memory.snapshot();
        let ctx = ClickContext {
            backend: self.backend.as_ref(),
            overlay: &slot.overlay,
            frame: slot.frame.as_ref(),
            record: Some(&record),
            memory: snapshot.recent(self.config.clickqa.recent_k),
            retriever: self.retriever.as_ref().map(|r| r as &dyn Retriever),
            lexicon: &self.lexicon,
            cursor: &self.cursor,
            visual_prompt: self.config.clickqa.visual_prompt,
            near_miss_radius: self.config.clickqa.near_miss_radius,
        };
        let resp = respond_to_click(&ctx, &click)?;
        Ok(ClickOutcome {
            reply: ClickReply {
                frame_id: click.frame_id,
                message_id: message.message_id.clone(),
                question: resp.question,
                answer: resp.answer,
                purification_report: resp.purification_report,
                question_report: resp.question_report,
                retrieved: resp.retrieved,
            },
            question_raw: resp.question_raw,
        })
    }

    /// History as clients see it: captions purified.
    pub fn memory(&self, session_id: &str, q: &MemoryQuery) -> Result<MemoryReply, EngineError> {
        let _guard = RequestPathGuard::enter();
        let session = self.session(session_id)?;
        let snap = session.memory.snapshot();
        let entries: Vec<MemoryEntry> = match (q.t0, q.t1, q.recent) {
            (Some(t0), Some(t1), _) => snap.range(t0, t1)?,
            (Some(_), None, _) | (None, Some(_), _) => {
                return Err(EngineError::BadRequest("t0 and t1 must be given together".into()))
            }
            (None, None, Some(k)) => snap.recent(k).to_vec(),
            (None, None, None) => snap.entries().to_vec(),
        };
        Ok(MemoryReply {
            version: snap.version(),
            entries: entries
                .into_iter()
                .map(|mut e| {
                    e.caption = purify(&e.caption, &self.lexicon, None).0;
                    e
                })
                .collect(),
        })
    }

    /// Close the open segment and wait for its caption.
    pub fn flush(&self, session_id: &str) -> Result<usize, EngineError> {
        let session = self.session(session_id)?;
        session.worker.flush_and_wait().map_err(|e| EngineError::Worker(e.to_string()))?;
        Ok(session.memory.len())
    }

    /// Wait until queued frames are processed, leaving the segment open.
    pub fn wait_idle(&self, session_id: &str) -> Result<(), EngineError> {
        let session = self.session(session_id)?;
        session.worker.wait_idle().map_err(|e| EngineError::Worker(e.to_string()))
    }

    /// Stop every session worker, flushing open segments.
    pub fn close_all(&self) {
        let drained: Vec<Arc<Session>> = self
            .sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .drain()
            .map(|(_, s)| s)
            .collect();
        for s in drained {
            if let Err(e) = s.worker.flush_and_wait() {
                tracing::warn!(session = %s.id, error = %e, "flush on close failed");
            }
        }
    }
}
