//! ROUGE-L over token ids (F-measure with β = 1).

use alloc::vec;

use crate::error::{Error, Result};
use crate::TokenId;

/// Length of the longest common subsequence, two-row dynamic programme.
pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// `2PR / (P + R)` with `R = LCS/|reference|`, `P = LCS/|candidate|`.
pub fn rouge_l(reference: &[TokenId], candidate: &[TokenId]) -> Result<f64> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(Error::EmptyInput);
    }
    let lcs = lcs_len(reference, candidate);
    if lcs == 0 {
        return Ok(0.0);
    }
    let recall = lcs as f64 / reference.len() as f64;
    let precision = lcs as f64 / candidate.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        assert_eq!(rouge_l(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(rouge_l(&[1, 2, 3], &[4, 5]).unwrap(), 0.0);
    }

    #[test]
    fn hand_case() {
        // a b c d vs a c d: LCS 3, R = 3/4, P = 1
        let s = rouge_l(&[0, 1, 2, 3], &[0, 2, 3]).unwrap();
        assert!((s - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(rouge_l(&[], &[1]), Err(Error::EmptyInput));
        assert_eq!(rouge_l(&[1], &[]), Err(Error::EmptyInput));
    }
}
