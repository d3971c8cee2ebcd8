mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamdesk_core::fixtures::{constant_stream, random_stream, single_dip_stream, stream_from_fused};
use streamdesk_core::ses::{
    boundary_frames, compute_depth, segment_offline, segment_streaming, EventSegment, FrameFeature, SesConfig,
    SesStream,
};

fn config_for(seed: u64) -> SesConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e5);
    let window_size = rng.random_range(12..=96);
    SesConfig {
        gamma: rng.random_range(0.0..=1.0),
        alpha: rng.random_range(0.0..2.5),
        window_size,
        min_segment_len: rng.random_range(1..window_size.min(20)),
        warmup_frames: rng.random_range(1..=window_size),
    }
}

fn naive(signal: &[FrameFeature], c: &SesConfig) -> Vec<u64> {
    common::naive_boundaries(signal, c.gamma, c.alpha, c.window_size, c.warmup_frames, c.min_segment_len)
}

fn assert_partition(signal: &[FrameFeature], segs: &[EventSegment]) {
    assert_eq!(segs.first().unwrap().start_frame, signal[0].frame_id);
    assert_eq!(segs.last().unwrap().end_frame, signal.last().unwrap().frame_id);
    let ids: Vec<u64> = signal.iter().map(|f| f.frame_id).collect();
    for pair in segs.windows(2) {
        // the next segment starts at the frame right after this one ends
        let pos = ids.binary_search(&pair[0].end_frame).unwrap();
        assert_eq!(ids[pos + 1], pair[1].start_frame);
    }
    for s in segs {
        assert!(s.start_frame <= s.end_frame);
        assert!(s.confirmed_at_frame >= s.end_frame);
    }
}

#[test]
fn streaming_offline_and_naive_agree() {
    let mut boundaries = 0;
    for seed in 0..120u64 {
        let len = 500 + (seed as usize * 37) % 4501;
        let signal = random_stream(seed, len);
        let cfg = config_for(seed);
        let offline = segment_offline(&signal, &cfg).unwrap();
        let streaming = segment_streaming(&signal, &cfg).unwrap();
        assert_eq!(streaming, offline, "seed {seed}");
        assert_eq!(boundary_frames(&offline), naive(&signal, &cfg), "seed {seed}");
        assert_partition(&signal, &offline);
        boundaries += offline.len() - 1;
    }
    // the generator must actually exercise the boundary path
    assert!(boundaries > 1000, "only {boundaries} boundaries");
}

#[test]
fn default_config_matches_naive() {
    let cfg = SesConfig::default();
    for seed in 500..530u64 {
        let signal = random_stream(seed, 2000);
        let segs = segment_streaming(&signal, &cfg).unwrap();
        assert_eq!(boundary_frames(&segs), naive(&signal, &cfg));
    }
}

#[test]
fn single_dip_detected_at_dip() {
    let cfg = SesConfig::default();
    for (len, dip) in [(200, 100), (300, 40), (500, 421)] {
        let signal = single_dip_stream(len, dip);
        let segs = segment_offline(&signal, &cfg).unwrap();
        assert_eq!(boundary_frames(&segs), vec![dip as u64]);
        assert_eq!(segment_streaming(&signal, &cfg).unwrap(), segs);
    }
}

#[test]
fn constant_signals_have_no_boundary() {
    for v in [0.0, 0.35, 0.9, 1.0] {
        let segs = segment_streaming(&constant_stream(400, v), &SesConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (0, 399));
    }
}

#[test]
fn confirmation_is_bounded_by_window() {
    let cfg = SesConfig::default();
    for seed in 0..20u64 {
        let signal = random_stream(seed, 1500);
        let segs = segment_offline(&signal, &cfg).unwrap();
        let ids: Vec<u64> = signal.iter().map(|f| f.frame_id).collect();
        for s in &segs[..segs.len() - 1] {
            let boundary = ids.binary_search(&s.end_frame).unwrap() + 1;
            let confirmed = ids.binary_search(&s.confirmed_at_frame).unwrap();
            assert!(confirmed >= boundary && confirmed < boundary + cfg.window_size);
        }
    }
}

#[test]
fn streaming_emits_on_confirmation() {
    let cfg = SesConfig::default();
    let signal = random_stream(7, 3000);
    let mut stream = SesStream::new(cfg).unwrap();
    for f in &signal {
        for seg in stream.push_frame(*f).unwrap() {
            assert_eq!(seg.confirmed_at_frame, f.frame_id);
        }
    }
}

#[test]
fn depth_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..2000 {
        let n = rng.random_range(1..40);
        let window: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
        let i = rng.random_range(0..n);
        let s = compute_depth(&window, i).unwrap();
        // walk outwards until the slope turns
        let mut l = i;
        while l > 0 && !(l < i && l > 0 && window[l] >= window[l - 1] && window[l] >= window[l + 1]) {
            l -= 1;
        }
        let mut r = i;
        while r + 1 < n && !(r > i && window[r] >= window[r - 1] && window[r] >= window[r + 1]) {
            r += 1;
        }
        assert_eq!(s.left_peak, window[l]);
        assert_eq!(s.right_peak, window[r]);
        assert_eq!(s.depth, (window[l] + window[r] - 2.0 * window[i]) / 2.0);
    }
}

#[test]
fn candidates_shrink_as_alpha_grows() {
    for seed in 0..15u64 {
        let signal = random_stream(seed, 1500);
        let mut previous: Option<Vec<u64>> = None;
        for alpha in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
            let cfg = SesConfig {
                alpha,
                ..SesConfig::default()
            };
            let mut stream = SesStream::new(cfg).unwrap().record_candidates(true);
            for f in &signal {
                stream.push_frame(*f).unwrap();
            }
            stream.flush().unwrap();
            let now = stream.candidates().to_vec();
            if let Some(prev) = &previous {
                assert!(now.iter().all(|c| prev.contains(c)), "seed {seed} alpha {alpha}");
            }
            previous = Some(now);
        }
    }
}

#[test]
fn deterministic_across_runs() {
    let signal = random_stream(3, 4000);
    let cfg = SesConfig::default();
    assert_eq!(segment_streaming(&signal, &cfg).unwrap(), segment_streaming(&signal, &cfg).unwrap());
}

#[test]
fn rejects_out_of_order_frames() {
    let mut signal = stream_from_fused(&[0.5; 10]);
    signal.swap(3, 4);
    assert!(segment_offline(&signal, &SesConfig::default()).is_err());
    assert!(segment_streaming(&signal, &SesConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantised_signals_agree(values in prop::collection::vec(0u8..6, 20..400), w in 6usize..40) {
        // heavy ties exercise the >= peak rule
        let fused: Vec<f64> = values.iter().map(|&v| v as f64 / 5.0).collect();
        let signal = stream_from_fused(&fused);
        let cfg = SesConfig { window_size: w, min_segment_len: 3, warmup_frames: 4, ..SesConfig::default() };
        let offline = segment_offline(&signal, &cfg).unwrap();
        prop_assert_eq!(&segment_streaming(&signal, &cfg).unwrap(), &offline);
        prop_assert_eq!(boundary_frames(&offline), naive(&signal, &cfg));
    }
}
