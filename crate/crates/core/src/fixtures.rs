//! Seeded synthetic inputs for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kea::{trace_from_pairs, TokenScore};
use crate::ses::FrameFeature;

/// Frames per second assumed when deriving timestamps.
pub const FPS: f64 = 30.0;

/// Features whose fused value (at `gamma = 0.5`) equals `values[k]` exactly.
pub fn stream_from_fused(values: &[f64]) -> Vec<FrameFeature> {
    values
        .iter()
        .enumerate()
        .map(|(k, &c)| FrameFeature::new(k as u64, k as f64 / FPS, c, c))
        .collect()
}

/// `len` frames at 0.9 with a single-frame dip to 0.1 at `dip`.
pub fn single_dip_stream(len: usize, dip: usize) -> Vec<FrameFeature> {
    let values: Vec<f64> = (0..len).map(|k| if k == dip { 0.1 } else { 0.9 }).collect();
    stream_from_fused(&values)
}

pub fn constant_stream(len: usize, value: f64) -> Vec<FrameFeature> {
    stream_from_fused(&vec![value; len])
}

/// Scene-like stream: noisy plateaus separated by dips, with gaps in the
/// frame ids.
pub fn random_stream(seed: u64, len: usize) -> Vec<FrameFeature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level: f64 = rng.random_range(0.6..0.95);
    let mut frame_id = 0u64;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        if rng.random_bool(0.01) {
            level = rng.random_range(0.6..0.95);
        }
        let dip = rng.random_bool(0.03);
        let base = if dip { rng.random_range(0.0..0.5) } else { level };
        let vit = (base + rng.random_range(-0.04..0.04)).clamp(-1.0, 1.0);
        let flow = (base + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
        out.push(FrameFeature::new(frame_id, frame_id as f64 / FPS, vit, flow));
        frame_id += rng.random_range(1..=3);
    }
    out
}

/// Token trace of `len` scores: mostly confident, with occasional drops.
pub fn random_trace(seed: u64, len: usize) -> Vec<TokenScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(String, f64)> = (0..len)
        .map(|k| {
            let lp = if rng.random_bool(0.08) {
                rng.random_range(-4.0..-0.5)
            } else {
                rng.random_range(-0.6..0.0)
            };
            (format!("w{k}"), lp)
        })
        .collect();
    trace_from_pairs(pairs)
}
