use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::Serialize;
use thiserror::Error;

use super::{CaptionSource, MemoryEntry, MemoryStore};
use crate::backend::{BackendError, CaptionPrompt, ModelBackend};
use crate::instrument;
use crate::kea::{build_prefix, find_truncation, KeaConfig, TokenScore, TruncationResult};
use crate::ses::{EventSegment, FrameFeature, SesConfig, SesError, SesStream};

/// Words to hand back as the reuse prefix.
///
/// When the trace is word-level (one whitespace-free token per caption word)
/// the prefix is the first `prefix_len` words. Otherwise the trace is
/// sub-word: the leading token texts are concatenated and split on
/// whitespace, dropping a trailing partial word.
fn prefix_words(caption: &str, trace: &[TokenScore], prefix_len: usize) -> Vec<String> {
    let words: Vec<&str> = caption.split_whitespace().collect();
    let word_level = trace.len() == words.len()
        && trace
            .iter()
            .zip(&words)
            .all(|(t, w)| t.token_text == *w);
    if word_level {
        let cut = TruncationResult { index: None, prefix_len };
        return build_prefix(&words, &cut).iter().map(|w| w.to_string()).collect();
    }
    let text: String = trace[..prefix_len.min(trace.len())]
        .iter()
        .map(|t| t.token_text.as_str())
        .collect();
    let complete = prefix_len >= trace.len() || trace[prefix_len].token_text.starts_with(char::is_whitespace);
    let mut out: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if !complete && !text.ends_with(char::is_whitespace) {
        out.pop();
    }
    out
}

fn continue_caption(
    segment: &EventSegment,
    prior_caption: &str,
    backend: &dyn ModelBackend,
    kea: &KeaConfig,
) -> Result<(String, CaptionSource), BackendError> {
    let trace = backend.score_caption(prior_caption)?;
    let truncation = match find_truncation(&trace, kea) {
        Ok(t) => t,
        Err(e) => {
            tracing::debug!(error = %e, "prior caption unusable as prefix; captioning fresh");
            let fresh = backend.caption(&CaptionPrompt { segment, prefix: None })?;
            return Ok((fresh, CaptionSource::Fresh));
        }
    };
    let prefix = prefix_words(prior_caption, &trace, truncation.prefix_len);
    let caption = backend.caption(&CaptionPrompt {
        segment,
        prefix: Some(&prefix),
    })?;
    Ok((
        caption,
        CaptionSource::PrefixReused {
            prefix_len: truncation.prefix_len,
        },
    ))
}

/// Caption a closed segment, reusing a prefix of the previous caption when
/// one is available.
///
/// Backend failures yield an entry with an empty caption and `needs_retry`
/// set. A prior entry that itself needs a retry is ignored.
pub fn caption_pipeline(
    segment: &EventSegment,
    prior: Option<&MemoryEntry>,
    backend: &dyn ModelBackend,
    kea: &KeaConfig,
    created_at: f64,
) -> MemoryEntry {
    instrument::note_captioning();
    let usable = prior.filter(|p| !p.needs_retry && !p.caption.trim().is_empty());
    let outcome = match usable {
        Some(p) => continue_caption(segment, &p.caption, backend, kea),
        None => backend
            .caption(&CaptionPrompt { segment, prefix: None })
            .map(|c| (c, CaptionSource::Fresh)),
    };
    match outcome {
        Ok((caption, caption_source)) => MemoryEntry {
            segment: *segment,
            caption,
            caption_source,
            created_at,
            needs_retry: false,
        },
        Err(e) => {
            tracing::warn!(error = %e, start = segment.start_frame, "captioning failed; stored for retry");
            MemoryEntry {
                segment: *segment,
                caption: String::new(),
                caption_source: CaptionSource::Fresh,
                created_at,
                needs_retry: true,
            }
        }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct WorkerStats {
    pub frames: AtomicU64,
    pub rejected_frames: AtomicU64,
    pub segments: AtomicU64,
    pub captions_fresh: AtomicU64,
    pub captions_reused: AtomicU64,
    pub caption_failures: AtomicU64,
}

impl WorkerStats {
    pub fn reuse_rate(&self) -> f64 {
        let reused = self.captions_reused.load(Ordering::Relaxed);
        let total = reused + self.captions_fresh.load(Ordering::Relaxed);
        if total == 0 {
            0.0
        } else {
            reused as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("history worker has stopped")]
pub struct WorkerClosed;

enum Msg {
    Frame(FrameFeature),
    Flush(Sender<()>),
    Barrier(Sender<()>),
}

/// Background thread running segmentation, captioning and memory appends
/// for one stream.
pub struct HistoryWorker {
    tx: Option<Sender<Msg>>,
    handle: Option<JoinHandle<()>>,
    last_accepted: Mutex<Option<FrameFeature>>,
    stats: Arc<WorkerStats>,
    store: Arc<MemoryStore>,
}

struct WorkerState {
    stream: SesStream,
    kea: KeaConfig,
    backend: Arc<dyn ModelBackend>,
    store: Arc<MemoryStore>,
    stats: Arc<WorkerStats>,
}

impl WorkerState {
    fn record(&self, segments: Vec<EventSegment>) {
        for seg in segments {
            self.stats.segments.fetch_add(1, Ordering::Relaxed);
            let prior = self.store.last();
            let entry = caption_pipeline(&seg, prior.as_ref(), self.backend.as_ref(), &self.kea, seg.end_time);
            let counter = match (entry.needs_retry, entry.caption_source) {
                (true, _) => &self.stats.caption_failures,
                (false, CaptionSource::Fresh) => &self.stats.captions_fresh,
                (false, CaptionSource::PrefixReused { .. }) => &self.stats.captions_reused,
            };
            counter.fetch_add(1, Ordering::Relaxed);
            if let Err(e) = self.store.append_entry(entry) {
                tracing::error!(error = %e, "memory append rejected");
            }
        }
    }

    fn run(mut self, rx: Receiver<Msg>) {
        for msg in rx {
            match msg {
                Msg::Frame(f) => match self.stream.push_frame(f) {
                    Ok(segs) => {
                        self.stats.frames.fetch_add(1, Ordering::Relaxed);
                        self.record(segs);
                    }
                    Err(e) => {
                        self.stats.rejected_frames.fetch_add(1, Ordering::Relaxed);
                        tracing::warn!(error = %e, "frame rejected by segmenter");
                    }
                },
                Msg::Flush(ack) => {
                    match self.stream.flush() {
                        Ok(segs) => self.record(segs),
                        Err(e) => tracing::warn!(error = %e, "flush failed"),
                    }
                    let _ = ack.send(());
                }
                Msg::Barrier(ack) => {
                    let _ = ack.send(());
                }
            }
        }
        if let Ok(segs) = self.stream.flush() {
            self.record(segs);
        }
    }
}

impl HistoryWorker {
    pub fn spawn(
        ses: SesConfig,
        kea: KeaConfig,
        backend: Arc<dyn ModelBackend>,
        store: Arc<MemoryStore>,
    ) -> Result<Self, SesError> {
        kea.validate().map_err(|e| SesError::InvalidConfig(e.to_string()))?;
        let stream = SesStream::new(ses)?;
        let stats = Arc::new(WorkerStats::default());
        let (tx, rx) = mpsc::channel();
        let state = WorkerState {
            stream,
            kea,
            backend,
            store: Arc::clone(&store),
            stats: Arc::clone(&stats),
        };
        let handle = std::thread::Builder::new()
            .name("history-worker".into())
            .spawn(move || state.run(rx))
            .expect("spawning the history worker thread");
        Ok(Self {
            tx: Some(tx),
            handle: Some(handle),
            last_accepted: Mutex::new(None),
            stats,
            store,
        })
    }

    /// Queue a frame. Ordering and range checks happen here so callers get
    /// errors synchronously; segmentation itself runs on the worker.
    pub fn submit(&self, frame: FrameFeature) -> Result<(), SubmitError> {
        frame.validate()?;
        let mut last = self.last_accepted.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(prev) = *last {
            if frame.frame_id <= prev.frame_id {
                return Err(SesError::NonMonotonicFrame {
                    previous: prev.frame_id,
                    got: frame.frame_id,
                }
                .into());
            }
            if frame.timestamp < prev.timestamp {
                return Err(SesError::TimestampRegression {
                    frame_id: frame.frame_id,
                    previous: prev.timestamp,
                    got: frame.timestamp,
                }
                .into());
            }
        }
        self.tx
            .as_ref()
            .ok_or(WorkerClosed)?
            .send(Msg::Frame(frame))
            .map_err(|_| WorkerClosed)?;
        *last = Some(frame);
        Ok(())
    }

    /// Close the open segment and wait until everything queued so far is
    /// captioned and stored.
    pub fn flush_and_wait(&self) -> Result<(), WorkerClosed> {
        let (ack_tx, ack_rx) = mpsc::channel();
        self.tx
            .as_ref()
            .ok_or(WorkerClosed)?
            .send(Msg::Flush(ack_tx))
            .map_err(|_| WorkerClosed)?;
        ack_rx.recv().map_err(|_| WorkerClosed)
    }

    /// Wait until every frame queued so far has been segmented and its
    /// closed segments captioned. The open segment stays open.
    pub fn wait_idle(&self) -> Result<(), WorkerClosed> {
        let (ack_tx, ack_rx) = mpsc::channel();
        self.tx
            .as_ref()
            .ok_or(WorkerClosed)?
            .send(Msg::Barrier(ack_tx))
            .map_err(|_| WorkerClosed)?;
        ack_rx.recv().map_err(|_| WorkerClosed)
    }

    pub fn stats(&self) -> &WorkerStats {
        &self.stats
    }

    pub fn store(&self) -> &Arc<MemoryStore> {
        &self.store
    }

    /// Drain the queue, flush and join the thread.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            if h.join().is_err() {
                tracing::error!("history worker panicked");
            }
        }
    }
}

impl Drop for HistoryWorker {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error(transparent)]
    Invalid(#[from] SesError),
    #[error(transparent)]
    Closed(#[from] WorkerClosed),
}
