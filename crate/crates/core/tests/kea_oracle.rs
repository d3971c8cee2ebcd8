mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamdesk_core::fixtures::random_trace;
use streamdesk_core::kea::{build_prefix, find_truncation, trace_from_pairs, KeaConfig, KeaError, TokenScore};

fn trace(values: &[f64]) -> Vec<TokenScore> {
    trace_from_pairs(values.iter().enumerate().map(|(k, &v)| (format!("t{k}"), v)))
}

#[test]
fn worked_example() {
    let mut values = vec![-0.1; 5];
    values.push(-2.0);
    values.extend([-0.1, -0.2, -0.1, -0.3]);
    let cfg = KeaConfig {
        delta: 5,
        alpha: 1.0,
        beta: 0.8,
    };
    let r = find_truncation(&trace(&values), &cfg).unwrap();
    assert_eq!(r.index, Some(6));
    assert_eq!(r.prefix_len, 5);
}

#[test]
fn matches_brute_force_on_random_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    for seed in 0..1500u64 {
        let len = rng.random_range(2..=512);
        let t = random_trace(seed, len);
        let cfg = KeaConfig {
            delta: rng.random_range(1..=12),
            alpha: rng.random_range(0.0..2.0),
            beta: rng.random_range(-0.5..2.0),
        };
        let got = find_truncation(&t, &cfg).unwrap();
        let want = common::brute_force_truncation(&t, cfg.delta, cfg.alpha, cfg.beta);
        assert_eq!(got.index, want, "seed {seed}");
        assert_eq!(got.prefix_len, want.map_or(len, |z| z - 1));
        hits += usize::from(want.is_some());
    }
    assert!(hits > 300, "only {hits} truncations");
}

#[test]
fn earlier_positions_do_not_qualify() {
    let cfg = KeaConfig::default();
    for seed in 0..300u64 {
        let t = random_trace(seed, 200);
        let r = find_truncation(&t, &cfg).unwrap();
        let Some(o) = r.index else { continue };
        // truncating the trace just after o leaves o as the answer, and
        // every shorter trace finds nothing before o
        for cut in (cfg.delta + 2)..=o {
            let shorter = find_truncation(&t[..cut], &cfg).unwrap();
            assert_eq!(shorter.index, None, "seed {seed} cut {cut}");
        }
        assert_eq!(find_truncation(&t[..o + 1], &cfg).unwrap().index, Some(o));
    }
}

#[test]
fn higher_floor_never_truncates_earlier() {
    for seed in 0..300u64 {
        let t = random_trace(seed, 128);
        let mut previous = 0usize;
        for beta in [0.0, 0.4, 0.8, 1.2, 1.6, 2.5, 5.0] {
            let cfg = KeaConfig {
                beta,
                ..KeaConfig::default()
            };
            let r = find_truncation(&t, &cfg).unwrap();
            let pos = r.index.unwrap_or(usize::MAX);
            assert!(pos >= previous, "seed {seed} beta {beta}");
            previous = pos;
        }
    }
}

#[test]
fn last_position_is_never_a_candidate() {
    let mut values = vec![-0.1; 6];
    values.push(-9.0);
    let r = find_truncation(&trace(&values), &KeaConfig::default()).unwrap();
    assert_eq!(r.index, None);
    assert_eq!(r.prefix_len, 7);
}

#[test]
fn errors() {
    assert!(matches!(find_truncation(&trace(&[-0.1]), &KeaConfig::default()), Err(KeaError::TooShort(1))));
    let mut t = trace(&[-0.1; 8]);
    t[3].position = 9;
    assert!(matches!(find_truncation(&t, &KeaConfig::default()), Err(KeaError::NonContiguous { .. })));
    let mut t = trace(&[-0.1; 8]);
    t[2].log_prob = f64::NAN;
    assert!(matches!(find_truncation(&t, &KeaConfig::default()), Err(KeaError::NonFinite(3))));
}

proptest! {
    #[test]
    fn prefix_is_leading_tokens(values in prop::collection::vec(-5.0f64..0.0, 2..80), delta in 1usize..8) {
        let t = trace(&values);
        let cfg = KeaConfig { delta, ..KeaConfig::default() };
        let r = find_truncation(&t, &cfg).unwrap();
        let prefix = build_prefix(&t, &r);
        prop_assert_eq!(prefix.len(), r.prefix_len);
        prop_assert_eq!(prefix, &t[..r.prefix_len]);
        prop_assert_eq!(r.index, common::brute_force_truncation(&t, delta, cfg.alpha, cfg.beta));
    }
}
