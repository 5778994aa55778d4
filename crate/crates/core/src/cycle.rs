//! Periodic-suffix detection and cycle bookkeeping.
//!
//! A sequence `w` of length `L` cycles with period `n` from index `T` when
//! `w[t] == w[t + n]` for every `T ≤ t ≤ L − n − 1`. For a fixed `n` the
//! smallest valid `T` is found from the Z-function of the reversed sequence:
//! `z[n]` is the length of the longest common prefix of `rev(w)` and
//! `rev(w)[n..]`, so the longest suffix with period `n` has length `n + z[n]`.
//! Scanning `n` upwards gives the minimal period in `O(L)` overall.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Periodicity certificate of a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleAnnotation {
    /// Index where the periodic suffix starts.
    pub start: usize,
    /// Cycle length in tokens.
    pub len: usize,
    /// Complete repetitions of the unit from `start`, `⌊(L − start)/len⌋`.
    pub reps: usize,
    /// The repeating unit, `tokens[start..start + len]`.
    pub unit: Vec<TokenId>,
}

/// Z-function: `z[i]` = length of the longest common prefix of `s` and `s[i..]`
/// (`z[0]` is defined as `s.len()`).
pub fn z_function<T: PartialEq>(s: &[T]) -> Vec<usize> {
    let n = s.len();
    let mut z = vec![0; n];
    if n == 0 {
        return z;
    }
    z[0] = n;
    let (mut l, mut r) = (0usize, 0usize);
    for i in 1..n {
        if i < r {
            z[i] = (r - i).min(z[i - l]);
        }
        while i + z[i] < n && s[z[i]] == s[i + z[i]] {
            z[i] += 1;
        }
        if i + z[i] > r {
            l = i;
            r = i + z[i];
        }
    }
    z
}

/// Smallest cycle length `≥ min_cycle_len` whose periodic suffix holds at
/// least `min_reps` complete repetitions, with the earliest start for it.
pub fn detect_cycle(tokens: &[TokenId], min_cycle_len: usize, min_reps: usize) -> Option<CycleAnnotation> {
    let len = tokens.len();
    if len == 0 {
        return None;
    }
    let min_cycle_len = min_cycle_len.max(1);
    let min_reps = min_reps.max(1);
    let reversed: Vec<TokenId> = tokens.iter().rev().copied().collect();
    let z = z_function(&reversed);
    (min_cycle_len..=len / min_reps).find_map(|n| {
        let periodic = (n + z.get(n).copied().unwrap_or(0)).min(len);
        let start = len - periodic;
        let reps = (len - start) / n;
        (reps >= min_reps).then(|| CycleAnnotation { start, len: n, reps, unit: tokens[start..start + n].to_vec() })
    })
}

/// Earliest immediate repetition `u u` with `|u| ≥ min_cycle_len`: the
/// leftmost start, shortest unit at that start. The periodicity need not
/// persist to the end of the sequence.
pub fn find_tandem_repeat(tokens: &[TokenId], min_cycle_len: usize) -> Option<CycleAnnotation> {
    let len = tokens.len();
    let min_cycle_len = min_cycle_len.max(1);
    for start in 0..len {
        for n in min_cycle_len..=(len - start) / 2 {
            if tokens[start..start + n] == tokens[start + n..start + 2 * n] {
                let mut reps = 2;
                while start + (reps + 1) * n <= len
                    && tokens[start + reps * n..start + (reps + 1) * n] == tokens[start..start + n]
                {
                    reps += 1;
                }
                return Some(CycleAnnotation { start, len: n, reps, unit: tokens[start..start + n].to_vec() });
            }
        }
    }
    None
}

/// Spans of the first `k` cycles; cycle `i` (1-based) covers
/// `start + (i − 1)·len .. start + i·len`.
pub fn cycle_slices(annotation: &CycleAnnotation, k: usize) -> Result<Vec<Range<usize>>> {
    if k > annotation.reps {
        return Err(Error::CycleRange { requested: k, available: annotation.reps });
    }
    let (t, n) = (annotation.start, annotation.len);
    Ok((1..=k).map(|i| t + (i - 1) * n..t + i * n).collect())
}

/// Share of sequences with a detected cycle plus the cycle-length histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionStats {
    pub total: usize,
    pub repetitive: usize,
    pub rate: f64,
    /// cycle length → count
    pub histogram: BTreeMap<usize, usize>,
}

pub fn repetition_rate<S: AsRef<[TokenId]>>(
    generations: &[S],
    min_cycle_len: usize,
    min_reps: usize,
) -> Result<RepetitionStats> {
    if generations.is_empty() {
        return Err(Error::Argument("repetition rate over an empty set".into()));
    }
    let mut histogram = BTreeMap::new();
    let mut repetitive = 0;
    for g in generations {
        if let Some(a) = detect_cycle(g.as_ref(), min_cycle_len, min_reps) {
            repetitive += 1;
            *histogram.entry(a.len).or_insert(0) += 1;
        }
    }
    Ok(RepetitionStats {
        total: generations.len(),
        repetitive,
        rate: repetitive as f64 / generations.len() as f64,
        histogram,
    })
}
