//! Event-level history.
//!
//! A single background writer appends captioned segments; any number of
//! readers take immutable snapshots without waiting on captioning.

mod pipeline;

use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::ses::EventSegment;

pub use pipeline::{caption_pipeline, HistoryWorker, SubmitError, WorkerClosed, WorkerStats};

/// History size handed to the answer path when not configured.
pub const DEFAULT_RECENT_K: usize = 5;

pub const MEMORY_DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CaptionSource {
    Fresh,
    PrefixReused { prefix_len: usize },
}

impl CaptionSource {
    pub fn prefix_len(&self) -> Option<usize> {
        match self {
            CaptionSource::Fresh => None,
            CaptionSource::PrefixReused { prefix_len } => Some(*prefix_len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub segment: EventSegment,
    pub caption: String,
    pub caption_source: CaptionSource,
    /// Stream time (seconds) at which the entry was produced.
    pub created_at: f64,
    /// Captioning failed; the caption is empty.
    #[serde(default)]
    pub needs_retry: bool,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("segment [{start}, {end}] does not start after the last stored segment, which ends at {last_end}")]
    OutOfOrder { start: u64, end: u64, last_end: u64 },
    #[error("segment [{start}, {end}] is inverted")]
    InvalidSegment { start: u64, end: u64 },
    #[error("range start {t0} is after end {t1}")]
    InvalidRange { t0: f64, t1: f64 },
    #[error("memory dump version {found}, expected {MEMORY_DUMP_VERSION}")]
    DumpVersion { found: u32 },
    #[error(transparent)]
    File(#[from] JsonlError),
}

/// Immutable view of the store at one version.
#[derive(Debug, Clone, Default)]
pub struct MemorySnapshot {
    version: u64,
    entries: Arc<Vec<MemoryEntry>>,
}

impl MemorySnapshot {
    /// Number of appends that preceded this snapshot.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn recent(&self, k: usize) -> &[MemoryEntry] {
        &self.entries[self.entries.len().saturating_sub(k)..]
    }

    pub fn range(&self, t0: f64, t1: f64) -> Result<Vec<MemoryEntry>, MemoryError> {
        if t0 > t1 || t0.is_nan() || t1.is_nan() {
            return Err(MemoryError::InvalidRange { t0, t1 });
        }
        Ok(self
            .entries
            .iter()
            .filter(|e| e.segment.overlaps_time(t0, t1))
            .cloned()
            .collect())
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    current: RwLock<MemorySnapshot>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpHeader {
    version: u32,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpLine {
    start: u64,
    end: u64,
    confirmed_at: u64,
    start_time: f64,
    end_time: f64,
    caption: String,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prefix_len: Option<usize>,
    created_at: f64,
    #[serde(default)]
    needs_retry: bool,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        self.current.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Append atomically. Returns the new version.
    pub fn append_entry(&self, entry: MemoryEntry) -> Result<u64, MemoryError> {
        let seg = entry.segment;
        if seg.start_frame > seg.end_frame {
            return Err(MemoryError::InvalidSegment {
                start: seg.start_frame,
                end: seg.end_frame,
            });
        }
        let mut guard = self.current.write().unwrap_or_else(|p| p.into_inner());
        if let Some(last) = guard.entries.last() {
            if seg.start_frame <= last.segment.end_frame {
                return Err(MemoryError::OutOfOrder {
                    start: seg.start_frame,
                    end: seg.end_frame,
                    last_end: last.segment.end_frame,
                });
            }
        }
        // readers holding the old Arc keep their copy
        let mut next = Vec::with_capacity(guard.entries.len() + 1);
        next.extend(guard.entries.iter().cloned());
        next.push(entry);
        *guard = MemorySnapshot {
            version: guard.version + 1,
            entries: Arc::new(next),
        };
        Ok(guard.version)
    }

    pub fn len(&self) -> usize {
        self.snapshot().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last(&self) -> Option<MemoryEntry> {
        self.snapshot().entries.last().cloned()
    }

    /// The last `k` entries in segment order.
    pub fn recent(&self, k: usize) -> Vec<MemoryEntry> {
        self.snapshot().recent(k).to_vec()
    }

    /// Entries whose time span intersects `[t0, t1]`.
    pub fn range(&self, t0: f64, t1: f64) -> Result<Vec<MemoryEntry>, MemoryError> {
        self.snapshot().range(t0, t1)
    }

    pub fn dump<W: Write>(&self, writer: W) -> Result<(), MemoryError> {
        let snap = self.snapshot();
        let lines: Vec<DumpLine> = snap
            .entries()
            .iter()
            .map(|e| DumpLine {
                start: e.segment.start_frame,
                end: e.segment.end_frame,
                confirmed_at: e.segment.confirmed_at_frame,
                start_time: e.segment.start_time,
                end_time: e.segment.end_time,
                caption: e.caption.clone(),
                source: match e.caption_source {
                    CaptionSource::Fresh => "fresh".into(),
                    CaptionSource::PrefixReused { .. } => "prefix-reused".into(),
                },
                prefix_len: e.caption_source.prefix_len(),
                created_at: e.created_at,
                needs_retry: e.needs_retry,
            })
            .collect();
        jsonl::write_with_header(
            writer,
            &DumpHeader {
                version: MEMORY_DUMP_VERSION,
                count: lines.len(),
            },
            &lines,
        )?;
        Ok(())
    }

    pub fn restore<R: BufRead>(reader: R) -> Result<Self, MemoryError> {
        let (header, lines): (DumpHeader, Vec<DumpLine>) = jsonl::read_with_header(reader)?;
        if header.version != MEMORY_DUMP_VERSION {
            return Err(MemoryError::DumpVersion { found: header.version });
        }
        if header.count != lines.len() {
            return Err(JsonlError::Invalid {
                line: 1,
                message: format!("header declares {} entries, file has {}", header.count, lines.len()),
            }
            .into());
        }
        let store = Self::new();
        for (i, l) in lines.into_iter().enumerate() {
            let caption_source = match (l.source.as_str(), l.prefix_len) {
                ("fresh", None) => CaptionSource::Fresh,
                ("prefix-reused", Some(prefix_len)) => CaptionSource::PrefixReused { prefix_len },
                (other, p) => {
                    return Err(JsonlError::Invalid {
                        line: i + 2,
                        message: format!("bad caption source {other:?} with prefix_len {p:?}"),
                    }
                    .into())
                }
            };
            store.append_entry(MemoryEntry {
                segment: EventSegment {
                    start_frame: l.start,
                    end_frame: l.end,
                    confirmed_at_frame: l.confirmed_at,
                    start_time: l.start_time,
                    end_time: l.end_time,
                },
                caption: l.caption,
                caption_source,
                created_at: l.created_at,
                needs_retry: l.needs_retry,
            })?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn entry(start: u64, end: u64) -> MemoryEntry {
        MemoryEntry {
            segment: EventSegment {
                start_frame: start,
                end_frame: end,
                confirmed_at_frame: end + 2,
                start_time: start as f64 / 10.0,
                end_time: end as f64 / 10.0,
            },
            caption: format!("event {start}"),
            caption_source: if (start / 10).is_multiple_of(2) {
                CaptionSource::Fresh
            } else {
                CaptionSource::PrefixReused { prefix_len: 3 }
            },
            created_at: end as f64 / 10.0,
            needs_retry: false,
        }
    }

    #[test]
    fn append_and_order() {
        let store = MemoryStore::new();
        assert_eq!(store.append_entry(entry(0, 9)).unwrap(), 1);
        assert_eq!(store.len(), 1);
        assert!(matches!(
            store.append_entry(entry(5, 20)),
            Err(MemoryError::OutOfOrder { last_end: 9, .. })
        ));
        for k in 1..10 {
            store.append_entry(entry(k * 10, k * 10 + 9)).unwrap();
        }
        let all = store.snapshot();
        assert_eq!(all.entries().len(), 10);
        assert!(all.entries().windows(2).all(|w| w[0].segment.end_frame < w[1].segment.start_frame));
    }

    #[test]
    fn recent_is_suffix() {
        let store = MemoryStore::new();
        assert!(store.recent(3).is_empty());
        for k in 0..4 {
            store.append_entry(entry(k * 10, k * 10 + 9)).unwrap();
        }
        assert!(store.recent(0).is_empty());
        assert_eq!(store.recent(10).len(), 4);
        let r = store.recent(2);
        assert_eq!(r[0].segment.start_frame, 20);
        assert_eq!(r[1].segment.start_frame, 30);
    }

    #[test]
    fn range_queries() {
        let store = MemoryStore::new();
        for k in 1..5 {
            store.append_entry(entry(k * 10, k * 10 + 9)).unwrap();
        }
        // entries span 1.0..4.9 seconds
        assert!(store.range(0.0, 0.5).unwrap().is_empty());
        assert_eq!(store.range(0.0, 10.0).unwrap().len(), 4);
        let mid = store.range(2.5, 3.0).unwrap();
        assert_eq!(mid.iter().map(|e| e.segment.start_frame).collect::<Vec<_>>(), vec![20, 30]);
        assert!(matches!(store.range(2.0, 1.0), Err(MemoryError::InvalidRange { .. })));
    }

    #[test]
    fn snapshots_are_stable() {
        let store = MemoryStore::new();
        store.append_entry(entry(0, 9)).unwrap();
        let before = store.snapshot();
        store.append_entry(entry(10, 19)).unwrap();
        assert_eq!(before.entries().len(), 1);
        assert_eq!(before.version(), 1);
        assert_eq!(store.snapshot().version(), 2);
    }

    #[test]
    fn dump_restore() {
        let store = MemoryStore::new();
        for k in 0..5 {
            store.append_entry(entry(k * 10, k * 10 + 9)).unwrap();
        }
        let mut buf = Vec::new();
        store.dump(&mut buf).unwrap();
        let back = MemoryStore::restore(buf.as_slice()).unwrap();
        assert_eq!(back.snapshot().entries(), store.snapshot().entries());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(2).unwrap().contains("\"prefix_len\":3"));
    }
}
