//! Request-path instrumentation.
//!
//! Online request handlers mark their thread with [`RequestPathGuard`].
//! Segmentation and caption generation report themselves here; if either
//! runs while a guard is live, a violation counter is bumped. Tests assert
//! the counters stay at zero.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

static SEGMENTATION_ON_REQUEST_PATH: AtomicU64 = AtomicU64::new(0);
static CAPTIONING_ON_REQUEST_PATH: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static ON_REQUEST_PATH: Cell<u32> = const { Cell::new(0) };
}

/// Marks the current thread as serving an online request until dropped.
#[must_use]
pub struct RequestPathGuard {
    _private: (),
}

impl RequestPathGuard {
    pub fn enter() -> Self {
        ON_REQUEST_PATH.with(|c| c.set(c.get() + 1));
        Self { _private: () }
    }
}

impl Drop for RequestPathGuard {
    fn drop(&mut self) {
        ON_REQUEST_PATH.with(|c| c.set(c.get().saturating_sub(1)));
    }
}

pub fn on_request_path() -> bool {
    ON_REQUEST_PATH.with(|c| c.get() > 0)
}

pub(crate) fn note_segmentation() {
    if on_request_path() {
        SEGMENTATION_ON_REQUEST_PATH.fetch_add(1, Ordering::Relaxed);
    }
}

pub(crate) fn note_captioning() {
    if on_request_path() {
        CAPTIONING_ON_REQUEST_PATH.fetch_add(1, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct RequestPathViolations {
    pub segmentation: u64,
    pub captioning: u64,
}

impl RequestPathViolations {
    pub fn is_clean(&self) -> bool {
        self.segmentation == 0 && self.captioning == 0
    }
}

pub fn violations() -> RequestPathViolations {
    RequestPathViolations {
        segmentation: SEGMENTATION_ON_REQUEST_PATH.load(Ordering::Relaxed),
        captioning: CAPTIONING_ON_REQUEST_PATH.load(Ordering::Relaxed),
    }
}
