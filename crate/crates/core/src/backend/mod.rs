//! Model backend abstraction.
//!
//! Every large-model call in the system goes through [`ModelBackend`]. Each
//! method takes a typed prompt; [`HttpBackend`] renders it into a
//! chat-completion request, [`MockBackend`] answers it deterministically from
//! the typed fields.

mod http;
mod mock;
mod prompts;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{fingerprint, MockBackend, FALLBACK_ANSWER};
pub use prompts::{
    AnswerPrompt, CaptionPrompt, ChatMessage, ClickPrompt, CopyDraft, CopyPrompt, IntegrationPrompt,
    JudgePrompt, RewritePrompt, Role,
};

use crate::kea::TokenScore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("backend cannot serve this request: {0}")]
    Unsupported(String),
}

pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Transcribe the bullet message under a click.
    fn read_click(&self, prompt: &ClickPrompt<'_>) -> Result<String, BackendError>;

    fn answer(&self, prompt: &AnswerPrompt<'_>) -> Result<String, BackendError>;

    /// Raw structured output (a JSON object with the five record fields).
    fn integrate(&self, prompt: &IntegrationPrompt<'_>) -> Result<String, BackendError>;

    fn write_copy(&self, prompt: &CopyPrompt<'_>) -> Result<CopyDraft, BackendError>;

    /// Rewrite one sentence containing flagged phrases.
    fn rewrite(&self, prompt: &RewritePrompt<'_>) -> Result<String, BackendError>;

    /// Fresh caption, or a continuation when the prompt carries a prefix. The
    /// returned caption includes the prefix.
    fn caption(&self, prompt: &CaptionPrompt<'_>) -> Result<String, BackendError>;

    /// Per-token log-probabilities of an existing caption.
    fn score_caption(&self, caption: &str) -> Result<Vec<TokenScore>, BackendError>;

    fn judge(&self, prompt: &JudgePrompt<'_>) -> Result<bool, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendProfile {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub retry: u32,
    pub seed: u64,
    /// Mock only: sleep injected before every call.
    pub latency_ms: u64,
    /// Mock only: fraction of click transcriptions returned garbled.
    pub corruption_rate: f64,
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model: "default".to_string(),
            timeout_ms: 30_000,
            retry: 1,
            seed: 0,
            latency_ms: 0,
            corruption_rate: 0.0,
        }
    }
}

impl BackendProfile {
    pub fn mock(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Http if self.endpoint.as_deref().is_none_or(str::is_empty) => Err(
                BackendError::Unsupported("http backend requires an endpoint".into()),
            ),
            BackendKind::Mock if !(0.0..=1.0).contains(&self.corruption_rate) => Err(
                BackendError::Unsupported(format!("corruption_rate {} outside [0, 1]", self.corruption_rate)),
            ),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ModelBackend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Arc::new(
                MockBackend::new(self.seed)
                    .with_latency(Duration::from_millis(self.latency_ms))
                    .with_corruption(self.corruption_rate),
            ),
            BackendKind::Http => Arc::new(HttpBackend::new(
                self.endpoint.clone().unwrap_or_default(),
                self.model.clone(),
                Duration::from_millis(self.timeout_ms),
                self.retry,
            )),
        })
    }
}
