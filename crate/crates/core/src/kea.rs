//! Caption prefix reuse.
//!
//! Given the per-token log-probabilities of the previous event's caption,
//! pick the first position whose confidence falls below the trailing
//! average by more than `max(alpha * mean, beta)`. Everything before that
//! position is reused as the prefix for the next caption.
//!
//! Positions are 1-based. Candidates run over `[delta + 1, len - 1]`, so the
//! trailing window `[z - delta, z - 1]` never underflows and the last token
//! is never a candidate.
//!
//! With natural-log probabilities (all `<= 0`) and `alpha >= 0`, `alpha * mean`
//! is never positive and the threshold is simply `beta`. The `max` is kept so
//! that positive confidence scales work unchanged.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeaError {
    #[error("caption has {0} tokens; at least 2 are required")]
    TooShort(usize),
    #[error("token positions must run 1..=len; found {found} at offset {offset}")]
    NonContiguous { offset: usize, found: usize },
    #[error("trailing window [{z} - {delta}, {z} - 1] starts before position 1")]
    WindowUnderflow { z: usize, delta: usize },
    #[error("position {z} beyond caption length {len}")]
    PositionOutOfRange { z: usize, len: usize },
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub position: usize,
    pub token_text: String,
    pub log_prob: f64,
}

impl TokenScore {
    pub fn new(position: usize, token_text: impl Into<String>, log_prob: f64) -> Self {
        Self {
            position,
            token_text: token_text.into(),
            log_prob,
        }
    }
}

/// Number tokens `1..` from a list of `(text, log_prob)` pairs.
pub fn trace_from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Vec<TokenScore> {
    pairs
        .into_iter()
        .enumerate()
        .map(|(k, (t, lp))| TokenScore::new(k + 1, t, lp))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeaConfig {
    /// Trailing-window length.
    pub delta: usize,
    pub alpha: f64,
    /// Threshold floor, in nats for log-probability input.
    pub beta: f64,
}

impl Default for KeaConfig {
    fn default() -> Self {
        Self {
            delta: 5,
            alpha: 1.0,
            beta: 0.8,
        }
    }
}

impl KeaConfig {
    pub fn validate(&self) -> Result<(), KeaError> {
        if self.delta == 0 {
            return Err(KeaError::InvalidConfig("delta must be at least 1".into()));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(KeaError::InvalidConfig(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(KeaError::InvalidConfig("beta must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationResult {
    /// 1-based truncation position, if any position qualified.
    pub index: Option<usize>,
    /// Number of leading tokens to reuse: `index - 1`, or the whole caption.
    pub prefix_len: usize,
}

fn check_trace(scores: &[TokenScore]) -> Result<(), KeaError> {
    for (offset, s) in scores.iter().enumerate() {
        if s.position != offset + 1 {
            return Err(KeaError::NonContiguous {
                offset,
                found: s.position,
            });
        }
        if !s.log_prob.is_finite() {
            return Err(KeaError::NonFinite(s.position));
        }
    }
    Ok(())
}

/// Mean score over positions `z - delta ..= z - 1`.
pub fn trailing_mean(scores: &[TokenScore], z: usize, delta: usize) -> Result<f64, KeaError> {
    if delta == 0 || z <= delta {
        return Err(KeaError::WindowUnderflow { z, delta });
    }
    if z > scores.len() {
        return Err(KeaError::PositionOutOfRange { z, len: scores.len() });
    }
    let window = &scores[z - delta - 1..z - 1];
    Ok(window.iter().map(|s| s.log_prob).sum::<f64>() / delta as f64)
}

pub fn dynamic_threshold(mu: f64, alpha: f64, beta: f64) -> f64 {
    (alpha * mu).max(beta)
}

pub fn find_truncation(scores: &[TokenScore], config: &KeaConfig) -> Result<TruncationResult, KeaError> {
    config.validate()?;
    let len = scores.len();
    if len < 2 {
        return Err(KeaError::TooShort(len));
    }
    check_trace(scores)?;
    let delta = config.delta;
    for z in (delta + 1)..len {
        let mu = trailing_mean(scores, z, delta)?;
        let drop = mu - scores[z - 1].log_prob;
        if drop > dynamic_threshold(mu, config.alpha, config.beta) {
            return Ok(TruncationResult {
                index: Some(z),
                prefix_len: z - 1,
            });
        }
    }
    Ok(TruncationResult {
        index: None,
        prefix_len: len,
    })
}

/// Leading `prefix_len` tokens of the caption the result was computed on.
pub fn build_prefix<'a, T>(caption_tokens: &'a [T], result: &TruncationResult) -> &'a [T] {
    &caption_tokens[..result.prefix_len.min(caption_tokens.len())]
}

/// First line of a token-trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFileHeader {
    pub caption_id: String,
    /// Number of token lines that follow.
    pub caption_len: usize,
}

pub fn read_trace_file<R: BufRead>(reader: R) -> Result<(TraceFileHeader, Vec<TokenScore>), JsonlError> {
    let (header, tokens): (TraceFileHeader, Vec<TokenScore>) = jsonl::read_with_header(reader)?;
    if header.caption_len != tokens.len() {
        return Err(JsonlError::Invalid {
            line: 1,
            message: format!("header declares {} tokens, file has {}", header.caption_len, tokens.len()),
        });
    }
    Ok((header, tokens))
}

pub fn write_trace_file<W: Write>(writer: W, caption_id: &str, tokens: &[TokenScore]) -> Result<(), JsonlError> {
    let header = TraceFileHeader {
        caption_id: caption_id.to_string(),
        caption_len: tokens.len(),
    };
    jsonl::write_with_header(writer, &header, tokens)
}
