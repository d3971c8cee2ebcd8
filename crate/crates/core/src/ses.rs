//! Streaming event segmentation.
//!
//! Each frame contributes a fused similarity `c = gamma * vit + (1 - gamma) * flow`.
//! A frame sitting in a valley of that signal gets a depth
//! `(left_peak + right_peak - 2 c) / 2`, where the peaks are the nearest local
//! maxima on either side inside a window of `window_size` frames. A frame
//! opens a new event when its depth exceeds `mean + alpha * std` of the last
//! `window_size` depths.
//!
//! [`SesStream`] does this incrementally; [`segment_offline`] does the same
//! over a whole signal and is the reference the stream is tested against.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instrument;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SesError {
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("frame_id {got} does not follow previous frame_id {previous}")]
    NonMonotonicFrame { previous: u64, got: u64 },
    #[error("timestamp {got} at frame {frame_id} precedes previous timestamp {previous}")]
    TimestampRegression { frame_id: u64, previous: f64, got: f64 },
    #[error("depth window is empty")]
    EmptyWindow,
    #[error("index {index} outside window of length {len}")]
    IndexOutOfWindow { index: usize, len: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Per-frame input signal.
///
/// `vit_similarity` is the cosine similarity of this frame's embedding to the
/// previous frame's; `flow_magnitude` is the mean optical-flow magnitude
/// against the previous frame, already normalised to `[0, 1]` by the producer.
/// The first frame of a stream has no predecessor and is conventionally
/// written as `1.0` / `0.0` (see [`FrameFeature::stream_start`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    pub frame_id: u64,
    pub timestamp: f64,
    pub vit_similarity: f64,
    pub flow_magnitude: f64,
}

impl FrameFeature {
    pub fn new(frame_id: u64, timestamp: f64, vit_similarity: f64, flow_magnitude: f64) -> Self {
        Self {
            frame_id,
            timestamp,
            vit_similarity,
            flow_magnitude,
        }
    }

    /// Feature values for a frame with no predecessor.
    pub fn stream_start(frame_id: u64, timestamp: f64) -> Self {
        Self::new(frame_id, timestamp, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), SesError> {
        if self.timestamp < 0.0 || !self.timestamp.is_finite() {
            return Err(SesError::OutOfRange {
                field: "timestamp",
                value: self.timestamp,
            });
        }
        check_range("vit_similarity", self.vit_similarity, -1.0, 1.0)?;
        check_range("flow_magnitude", self.flow_magnitude, 0.0, 1.0)?;
        Ok(())
    }
}

fn check_range(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), SesError> {
    // NaN fails both comparisons.
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(SesError::OutOfRange { field, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SesConfig {
    /// Weight of the embedding similarity in the fused signal.
    pub gamma: f64,
    /// Threshold multiplier on the window standard deviation.
    pub alpha: f64,
    /// Sliding-window length in frames, for both peak search and statistics.
    pub window_size: usize,
    pub min_segment_len: usize,
    /// Frames (counted from the stream start) before a boundary may be emitted.
    pub warmup_frames: usize,
}

impl Default for SesConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: 1.0,
            window_size: 64,
            min_segment_len: 8,
            warmup_frames: 8,
        }
    }
}

impl SesConfig {
    pub fn validate(&self) -> Result<(), SesError> {
        check_range("gamma", self.gamma, 0.0, 1.0)?;
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(SesError::OutOfRange {
                field: "alpha",
                value: self.alpha,
            });
        }
        if self.min_segment_len == 0 {
            return Err(SesError::InvalidConfig("min_segment_len must be positive".into()));
        }
        if self.warmup_frames == 0 {
            return Err(SesError::InvalidConfig("warmup_frames must be positive".into()));
        }
        if self.min_segment_len >= self.window_size {
            return Err(SesError::InvalidConfig(format!(
                "min_segment_len ({}) must be smaller than window_size ({})",
                self.min_segment_len, self.window_size
            )));
        }
        Ok(())
    }
}

/// Depth of one frame together with the peaks it was measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSample {
    pub frame_id: u64,
    pub c_hat: f64,
    pub depth: f64,
    pub left_peak: f64,
    pub right_peak: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub count: usize,
}

impl WindowStats {
    /// Exact two-pass mean and population variance of `depths`.
    pub fn compute(depths: &[f64]) -> Self {
        if depths.is_empty() {
            return Self::default();
        }
        let n = depths.len() as f64;
        let mean = depths.iter().sum::<f64>() / n;
        let variance = if depths.len() == 1 {
            0.0
        } else {
            depths.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n
        };
        Self {
            mean,
            variance,
            count: depths.len(),
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A closed event unit. Frame bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSegment {
    pub start_frame: u64,
    pub end_frame: u64,
    /// Latest frame observed when the closing boundary was confirmed.
    pub confirmed_at_frame: u64,
    pub start_time: f64,
    pub end_time: f64,
}

impl EventSegment {
    pub fn overlaps_time(&self, t0: f64, t1: f64) -> bool {
        self.start_time <= t1 && self.end_time >= t0
    }
}

pub fn fuse_similarity(c_vit: f64, m: f64, gamma: f64) -> Result<f64, SesError> {
    check_range("vit_similarity", c_vit, -1.0, 1.0)?;
    check_range("flow_magnitude", m, 0.0, 1.0)?;
    check_range("gamma", gamma, 0.0, 1.0)?;
    Ok(gamma * c_vit + (1.0 - gamma) * m)
}

fn is_interior_peak(window: &[f64], j: usize) -> bool {
    window[j] >= window[j - 1] && window[j] >= window[j + 1]
}

/// Depth of `window[i]` against the nearest local maxima on either side.
///
/// When no interior local maximum exists on a side, the window endpoint on
/// that side is used; an endpoint is itself a local maximum exactly when it
/// is `>=` its single neighbour, so the fallback and the endpoint-as-peak
/// reading coincide. The returned `frame_id` is the index `i`.
pub fn compute_depth(window: &[f64], i: usize) -> Result<DepthSample, SesError> {
    if window.is_empty() {
        return Err(SesError::EmptyWindow);
    }
    if i >= window.len() {
        return Err(SesError::IndexOutOfWindow {
            index: i,
            len: window.len(),
        });
    }
    let last = window.len() - 1;
    let left_peak = (1..i)
        .rev()
        .find(|&j| is_interior_peak(window, j))
        .map_or(window[0], |j| window[j]);
    let right_peak = if i == last {
        window[last]
    } else {
        (i + 1..last)
            .find(|&j| is_interior_peak(window, j))
            .map_or(window[last], |j| window[j])
    };
    let c_hat = window[i];
    Ok(DepthSample {
        frame_id: i as u64,
        c_hat,
        depth: (left_peak + right_peak - 2.0 * c_hat) / 2.0,
        left_peak,
        right_peak,
    })
}

/// Recomputes the statistics over the current depth window.
pub fn update_window_stats(_previous: WindowStats, depths: &[f64]) -> WindowStats {
    WindowStats::compute(depths)
}

/// Raw threshold rule: `d > mean + alpha * std`, strict.
pub fn is_boundary(d: f64, stats: &WindowStats, alpha: f64) -> bool {
    d > stats.mean + alpha * stats.std_dev()
}

#[derive(Debug, Clone, Copy)]
struct Observed {
    frame_id: u64,
    timestamp: f64,
}

/// Incremental segmenter. Single writer; move it between threads freely.
#[derive(Debug, Clone)]
pub struct SesStream {
    config: SesConfig,
    /// Fused values for absolute indices `[base, len)`.
    fused: VecDeque<f64>,
    frames: VecDeque<Observed>,
    base: usize,
    len: usize,
    /// Depths for absolute indices `[next_depth - depths.len(), next_depth)`.
    depths: VecDeque<f64>,
    next_depth: usize,
    seg_start: Option<Observed>,
    seg_start_index: usize,
    last_frame: Option<Observed>,
    candidates: Vec<u64>,
    record_candidates: bool,
}

impl SesStream {
    pub fn new(config: SesConfig) -> Result<Self, SesError> {
        config.validate()?;
        Ok(Self {
            config,
            fused: VecDeque::new(),
            frames: VecDeque::new(),
            base: 0,
            len: 0,
            depths: VecDeque::new(),
            next_depth: 0,
            seg_start: None,
            seg_start_index: 0,
            last_frame: None,
            candidates: Vec::new(),
            record_candidates: false,
        })
    }

    pub fn config(&self) -> &SesConfig {
        &self.config
    }

    /// Keep the frame ids whose depth crossed the threshold, before the
    /// warmup and minimum-length suppression. Used by tests.
    pub fn record_candidates(mut self, on: bool) -> Self {
        self.record_candidates = on;
        self
    }

    pub fn candidates(&self) -> &[u64] {
        &self.candidates
    }

    /// Frames seen since the stream (re)started.
    pub fn frames_seen(&self) -> usize {
        self.len
    }

    fn fused_at(&self, index: usize) -> f64 {
        self.fused[index - self.base]
    }

    fn frame_at(&self, index: usize) -> Observed {
        self.frames[index - self.base]
    }

    /// Feed one frame. Returns the segments closed by boundaries that became
    /// confirmable with this frame (usually none, occasionally one).
    pub fn push_frame(&mut self, f: FrameFeature) -> Result<Vec<EventSegment>, SesError> {
        f.validate()?;
        if let Some(prev) = self.last_frame {
            if f.frame_id <= prev.frame_id {
                return Err(SesError::NonMonotonicFrame {
                    previous: prev.frame_id,
                    got: f.frame_id,
                });
            }
            if f.timestamp < prev.timestamp {
                return Err(SesError::TimestampRegression {
                    frame_id: f.frame_id,
                    previous: prev.timestamp,
                    got: f.timestamp,
                });
            }
        }
        instrument::note_segmentation();
        let c = fuse_similarity(f.vit_similarity, f.flow_magnitude, self.config.gamma)?;
        let obs = Observed {
            frame_id: f.frame_id,
            timestamp: f.timestamp,
        };
        self.last_frame = Some(obs);
        if self.seg_start.is_none() {
            self.seg_start = Some(obs);
            self.seg_start_index = self.len;
        }
        self.fused.push_back(c);
        self.frames.push_back(obs);
        self.len += 1;

        let mut out = Vec::new();
        let w = self.config.window_size;
        // The newest confirmable interior peak is len - 2: both its neighbours are known.
        let fresh_peak = (self.len >= 3 && {
            let j = self.len - 2;
            let (a, b, c) = (self.fused_at(j - 1), self.fused_at(j), self.fused_at(j + 1));
            b >= a && b >= c
        })
        .then(|| self.len - 2);
        while self.next_depth < self.len {
            let i = self.next_depth;
            let aged_out = self.len >= i + w;
            let peak_seen = fresh_peak.is_some_and(|j| j > i);
            if !(aged_out || peak_seen) {
                break;
            }
            if let Some(seg) = self.resolve_next()? {
                out.push(seg);
            }
        }
        self.trim();
        Ok(out)
    }

    /// Close the stream: decide every pending frame against the end of the
    /// signal and close the trailing segment. The next push starts a new
    /// stream (frame ids must still increase).
    pub fn flush(&mut self) -> Result<Vec<EventSegment>, SesError> {
        let mut out = Vec::new();
        while self.next_depth < self.len {
            if let Some(seg) = self.resolve_next()? {
                out.push(seg);
            }
        }
        if let (Some(start), Some(last)) = (self.seg_start, self.last_frame) {
            if self.len > 0 {
                out.push(EventSegment {
                    start_frame: start.frame_id,
                    end_frame: last.frame_id,
                    confirmed_at_frame: last.frame_id,
                    start_time: start.timestamp,
                    end_time: last.timestamp,
                });
            }
        }
        let last_frame = self.last_frame;
        let config = self.config;
        let record = self.record_candidates;
        let candidates = std::mem::take(&mut self.candidates);
        *self = Self::new(config)?;
        self.last_frame = last_frame;
        self.record_candidates = record;
        self.candidates = candidates;
        Ok(out)
    }

    /// Compute the depth of `next_depth` over the observed signal and apply
    /// the boundary rule.
    fn resolve_next(&mut self) -> Result<Option<EventSegment>, SesError> {
        let w = self.config.window_size;
        let i = self.next_depth;
        let lo = i.saturating_sub(w - 1);
        let hi = (i + w - 1).min(self.len - 1);
        let window: Vec<f64> = (lo..=hi).map(|k| self.fused_at(k)).collect();
        let sample = compute_depth(&window, i - lo)?;
        self.depths.push_back(sample.depth);
        if self.depths.len() > w {
            self.depths.pop_front();
        }
        self.next_depth += 1;

        let stats = WindowStats::compute(self.depths.make_contiguous());
        if !is_boundary(sample.depth, &stats, self.config.alpha) {
            return Ok(None);
        }
        let frame = self.frame_at(i);
        if self.record_candidates {
            self.candidates.push(frame.frame_id);
        }
        if i < self.config.warmup_frames || i - self.seg_start_index < self.config.min_segment_len {
            return Ok(None);
        }
        let start = self.seg_start.expect("open segment while frames are pending");
        let end = self.frame_at(i - 1);
        let confirmed = self.frame_at(self.len - 1);
        self.seg_start = Some(frame);
        self.seg_start_index = i;
        Ok(Some(EventSegment {
            start_frame: start.frame_id,
            end_frame: end.frame_id,
            confirmed_at_frame: confirmed.frame_id,
            start_time: start.timestamp,
            end_time: end.timestamp,
        }))
    }

    fn trim(&mut self) {
        // Keep the left half-window of the next pending frame plus one frame
        // for the end of a segment closed at it.
        let keep_from = self.next_depth.saturating_sub(self.config.window_size);
        while self.base < keep_from {
            self.fused.pop_front();
            self.frames.pop_front();
            self.base += 1;
        }
    }
}

/// Batch segmentation of a complete signal.
///
/// Applies the same depth, statistics and suppression rules as
/// [`SesStream`]; with the same config, pushing every frame and flushing
/// yields exactly these segments.
pub fn segment_offline(
    signal: &[FrameFeature],
    config: &SesConfig,
) -> Result<Vec<EventSegment>, SesError> {
    config.validate()?;
    if signal.is_empty() {
        return Ok(Vec::new());
    }
    for pair in signal.windows(2) {
        if pair[1].frame_id <= pair[0].frame_id {
            return Err(SesError::NonMonotonicFrame {
                previous: pair[0].frame_id,
                got: pair[1].frame_id,
            });
        }
        if pair[1].timestamp < pair[0].timestamp {
            return Err(SesError::TimestampRegression {
                frame_id: pair[1].frame_id,
                previous: pair[0].timestamp,
                got: pair[1].timestamp,
            });
        }
    }
    let fused = signal
        .iter()
        .map(|f| {
            f.validate()?;
            fuse_similarity(f.vit_similarity, f.flow_magnitude, config.gamma)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n = fused.len();
    let last = n - 1;
    let w = config.window_size;

    // Index of the frame whose arrival makes frame i's depth computable.
    let ready_at = |i: usize| -> usize {
        let reach = i + w - 1;
        let peak = (i + 1..reach.min(last))
            .find(|&j| is_interior_peak(&fused, j))
            .map(|j| j + 1);
        match peak {
            Some(at) => at.min(reach),
            None if reach <= last => reach,
            None => last,
        }
    };

    let depths = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(w - 1);
            let hi = (i + w - 1).min(last);
            compute_depth(&fused[lo..=hi], i - lo).map(|s| s.depth)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut segments = Vec::new();
    let mut seg_start = 0usize;
    let mut confirmed = 0usize;
    for i in 0..n {
        confirmed = confirmed.max(ready_at(i));
        let stats = WindowStats::compute(&depths[i.saturating_sub(w - 1)..=i]);
        if !is_boundary(depths[i], &stats, config.alpha) {
            continue;
        }
        if i < config.warmup_frames || i - seg_start < config.min_segment_len {
            continue;
        }
        segments.push(EventSegment {
            start_frame: signal[seg_start].frame_id,
            end_frame: signal[i - 1].frame_id,
            confirmed_at_frame: signal[confirmed].frame_id,
            start_time: signal[seg_start].timestamp,
            end_time: signal[i - 1].timestamp,
        });
        seg_start = i;
    }
    segments.push(EventSegment {
        start_frame: signal[seg_start].frame_id,
        end_frame: signal[last].frame_id,
        confirmed_at_frame: signal[last].frame_id,
        start_time: signal[seg_start].timestamp,
        end_time: signal[last].timestamp,
    });
    Ok(segments)
}

/// Convenience: push every frame then flush.
pub fn segment_streaming(
    signal: &[FrameFeature],
    config: &SesConfig,
) -> Result<Vec<EventSegment>, SesError> {
    let mut stream = SesStream::new(*config)?;
    let mut out = Vec::new();
    for f in signal {
        out.extend(stream.push_frame(*f)?);
    }
    out.extend(stream.flush()?);
    Ok(out)
}

/// Frame ids that open a new segment (every segment start but the first).
pub fn boundary_frames(segments: &[EventSegment]) -> Vec<u64> {
    segments.iter().skip(1).map(|s| s.start_frame).collect()
}

/// Version written in the header line of feature files.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// First line of a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFileHeader {
    pub schema_version: u32,
    /// How the producer scaled `flow_magnitude` into `[0, 1]`.
    pub flow_normalization: String,
}

impl Default for FeatureFileHeader {
    fn default() -> Self {
        Self {
            schema_version: FEATURE_SCHEMA_VERSION,
            flow_normalization: "mean flow magnitude divided by the stream maximum".into(),
        }
    }
}

pub fn read_feature_file<R: BufRead>(reader: R) -> Result<(FeatureFileHeader, Vec<FrameFeature>), JsonlError> {
    let (header, frames): (FeatureFileHeader, Vec<FrameFeature>) = jsonl::read_with_header(reader)?;
    if header.schema_version != FEATURE_SCHEMA_VERSION {
        return Err(JsonlError::Invalid {
            line: 1,
            message: format!(
                "feature schema version {}, expected {FEATURE_SCHEMA_VERSION}",
                header.schema_version
            ),
        });
    }
    Ok((header, frames))
}

pub fn write_feature_file<W: Write>(
    writer: W,
    header: &FeatureFileHeader,
    frames: &[FrameFeature],
) -> Result<(), JsonlError> {
    jsonl::write_with_header(writer, header, frames)
}
