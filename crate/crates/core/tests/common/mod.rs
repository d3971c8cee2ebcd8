//! Reference implementations written from the definitions, with no shared
//! code beyond the input types. Deliberately slow.

#![allow(dead_code)]

use streamdesk_core::kea::TokenScore;
use streamdesk_core::ses::FrameFeature;

/// Frame ids that open a new segment, computed by rescanning the whole
/// signal for every frame.
pub fn naive_boundaries(
    signal: &[FrameFeature],
    gamma: f64,
    alpha: f64,
    w: usize,
    warmup: usize,
    min_len: usize,
) -> Vec<u64> {
    let c: Vec<f64> = signal
        .iter()
        .map(|f| gamma * f.vit_similarity + (1.0 - gamma) * f.flow_magnitude)
        .collect();
    let n = c.len();
    let mut depth = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(w - 1);
        let hi = (i + w - 1).min(n - 1);
        // interior local maxima of the window slice
        let peaks: Vec<usize> = (lo + 1..hi).filter(|&j| c[j] >= c[j - 1] && c[j] >= c[j + 1]).collect();
        let left = peaks.iter().rev().find(|&&j| j < i).map_or(c[lo], |&j| c[j]);
        let right = if i == hi {
            c[hi]
        } else {
            peaks.iter().find(|&&j| j > i).map_or(c[hi], |&j| c[j])
        };
        depth[i] = (left + right - 2.0 * c[i]) / 2.0;
    }
    let mut out = Vec::new();
    let mut start = 0usize;
    for i in 0..n {
        let win = &depth[i.saturating_sub(w - 1)..=i];
        let m = win.len() as f64;
        let mean = win.iter().sum::<f64>() / m;
        let var = if win.len() == 1 {
            0.0
        } else {
            win.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / m
        };
        if depth[i] > mean + alpha * var.sqrt() && i >= warmup && i - start >= min_len {
            out.push(signal[i].frame_id);
            start = i;
        }
    }
    out
}

/// First 1-based position `z` in `[delta + 1, L - 1]` whose score falls
/// below the trailing mean by more than `max(alpha * mu, beta)`.
pub fn brute_force_truncation(scores: &[TokenScore], delta: usize, alpha: f64, beta: f64) -> Option<usize> {
    let l: Vec<f64> = scores.iter().map(|s| s.log_prob).collect();
    for z in 1..l.len() {
        if z <= delta {
            continue;
        }
        let mut sum = 0.0;
        for k in (z - delta)..z {
            sum += l[k - 1];
        }
        let mu = sum / delta as f64;
        let threshold = if alpha * mu > beta { alpha * mu } else { beta };
        if mu - l[z - 1] > threshold {
            return Some(z);
        }
    }
    None
}

/// Byte offsets of every whole-word, ASCII case-insensitive occurrence of
/// any pattern, found by direct comparison at every offset.
pub fn naive_occurrences(text: &str, patterns: &[&str]) -> Vec<(usize, usize)> {
    let lower = text.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let mut out = Vec::new();
    for p in patterns {
        let p = p.to_ascii_lowercase();
        let pb = p.as_bytes();
        if pb.is_empty() || pb.len() > bytes.len() {
            continue;
        }
        for s in 0..=bytes.len() - pb.len() {
            let e = s + pb.len();
            if &bytes[s..e] != pb || !text.is_char_boundary(s) || !text.is_char_boundary(e) {
                continue;
            }
            if !word(text[..s].chars().next_back()) && !word(text[e..].chars().next()) {
                out.push((s, e));
            }
        }
    }
    out
}
