use loopscope_core::cycle::{detect_cycle, find_tandem_repeat, repetition_rate};
use loopscope_core::TokenId;
use proptest::prelude::*;

/// Cubic reference: try every `n` upwards and every `T` upwards, checking
/// `w[t] == w[t + n]` position by position.
fn brute_force(w: &[TokenId], min_n: usize, min_reps: usize) -> Option<(usize, usize, usize)> {
    let l = w.len();
    for n in min_n.max(1)..=l {
        for t in 0..l {
            if (t..l.saturating_sub(n)).all(|i| w[i] == w[i + n]) {
                let reps = (l - t) / n;
                if reps >= min_reps.max(1) {
                    return Some((t, n, reps));
                }
                break;
            }
        }
    }
    None
}

fn short_seq() -> impl Strategy<Value = Vec<TokenId>> {
    (1u32..=8).prop_flat_map(|v| prop::collection::vec(0..v, 0..=64))
}

/// A periodic tail built from a random unit, sometimes cut mid-cycle.
fn periodic_seq() -> impl Strategy<Value = Vec<TokenId>> {
    (prop::collection::vec(0u32..4, 0..12), prop::collection::vec(0u32..4, 1..6), 2usize..8, 0usize..6).prop_map(
        |(prefix, unit, reps, cut)| {
            let mut w = prefix;
            for _ in 0..reps {
                w.extend_from_slice(&unit);
            }
            w.extend(unit.iter().take(cut % unit.len()));
            w
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force(w in short_seq(), min_n in 1usize..4, min_reps in 1usize..4) {
        let got = detect_cycle(&w, min_n, min_reps).map(|a| (a.start, a.len, a.reps));
        prop_assert_eq!(got, brute_force(&w, min_n, min_reps));
    }

    #[test]
    fn matches_brute_force_on_periodic_inputs(w in periodic_seq()) {
        let got = detect_cycle(&w, 2, 2).map(|a| (a.start, a.len, a.reps));
        prop_assert_eq!(got, brute_force(&w, 2, 2));
    }

    #[test]
    fn annotation_is_minimal(w in periodic_seq()) {
        if let Some(a) = detect_cycle(&w, 2, 2) {
            prop_assert_eq!(&a.unit[..], &w[a.start..a.start + a.len]);
            prop_assert!(a.reps >= 2);
            for t in a.start..w.len() - a.len {
                prop_assert_eq!(w[t], w[t + a.len]);
            }
            for n in 2..a.len {
                let shorter = brute_force(&w, n, 2).filter(|&(_, m, _)| m == n);
                prop_assert!(shorter.is_none());
            }
            if a.start > 0 {
                prop_assert_ne!(w[a.start - 1], w[a.start - 1 + a.len]);
            }
        }
    }

    #[test]
    fn prefix_shifts_start(w in periodic_seq(), prefix in prop::collection::vec(10u32..20, 1..10)) {
        if let Some(a) = detect_cycle(&w, 2, 2) {
            let mut shifted = prefix.clone();
            shifted.extend_from_slice(&w);
            let m = prefix.len();
            // the prefix must not extend the period backward
            let extends = a.start == 0 && shifted[m - 1] == shifted[m - 1 + a.len];
            if !extends {
                let b = detect_cycle(&shifted, 2, 2).unwrap();
                prop_assert_eq!(b.len, a.len);
                prop_assert_eq!(b.start, a.start + m);
            }
        }
    }

    #[test]
    fn tandem_repeat_is_an_echo(w in short_seq()) {
        if let Some(a) = find_tandem_repeat(&w, 2) {
            let (t, n) = (a.start, a.len);
            prop_assert_eq!(&w[t..t + n], &w[t + n..t + 2 * n]);
            for s in 0..t {
                for m in 2..=(w.len() - s) / 2 {
                    prop_assert_ne!(&w[s..s + m], &w[s + m..s + 2 * m]);
                }
            }
        } else {
            prop_assert!(detect_cycle(&w, 2, 2).is_none());
        }
    }
}

#[test]
fn documented_examples() {
    let a = detect_cycle(&[5, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1], 2, 2).unwrap();
    assert_eq!((a.start, a.len, a.reps), (1, 3, 3));
    assert_eq!(a.unit, vec![1, 2, 3]);
    assert!(detect_cycle(&[1, 2, 3, 4, 5, 6], 2, 2).is_none());
    // a single-token run also has period 2
    let run = detect_cycle(&[7; 8], 2, 2).unwrap();
    assert_eq!((run.start, run.len), (0, 2));
}

#[test]
fn rate_counts_repetitive_sequences() {
    let seqs = vec![vec![1, 2, 1, 2], vec![3, 4, 3, 4, 3], vec![5, 6, 7, 5, 6, 7], vec![1, 2, 3, 4]];
    let stats = repetition_rate(&seqs, 2, 2).unwrap();
    assert_eq!(stats.rate, 0.75);
    assert_eq!(stats.histogram.get(&2), Some(&2));
    assert_eq!(stats.histogram.get(&3), Some(&1));
    assert!(repetition_rate::<Vec<TokenId>>(&[], 2, 2).is_err());
}
