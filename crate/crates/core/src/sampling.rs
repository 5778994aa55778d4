//! Nucleus (top-p) sampling with a seeded ChaCha8 stream.
//!
//! Tokens are ranked by descending probability, ties by ascending id. The
//! nucleus is the shortest ranked prefix whose cumulative mass reaches `p`
//! (never empty, so `p = 0` keeps only the top token). Each step draws one
//! `f64` in `[0, 1)` from the stream (53 random bits), scales it by the
//! nucleus mass and walks the ranked prefix until the running mass exceeds it.

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Generation, Model};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub p: f64,
    pub seed: u64,
    pub max_new: usize,
    pub samples_per_prompt: usize,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Argument(alloc::format!("top-p threshold {} outside [0, 1]", self.p)));
        }
        if self.max_new == 0 || self.samples_per_prompt == 0 {
            return Err(Error::Argument("max_new and samples_per_prompt must be positive".into()));
        }
        Ok(())
    }
}

/// Ranked nucleus with renormalised probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    pub tokens: Vec<TokenId>,
    pub probs: Vec<f64>,
}

fn rank(probs: &[f64], a: usize, b: usize) -> Ordering {
    probs[b].partial_cmp(&probs[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Ranked indices of the smallest prefix reaching mass `p`, and that mass.
fn nucleus_indices(probs: &[f64], p: f64) -> (Vec<usize>, f64) {
    let v = probs.len();
    let mut k = v.min(256);
    loop {
        let mut idx: Vec<usize> = (0..v).collect();
        if k < v {
            idx.select_nth_unstable_by(k - 1, |&a, &b| rank(probs, a, b));
            idx.truncate(k);
        }
        idx.sort_unstable_by(|&a, &b| rank(probs, a, b));
        let mut mass = 0.0;
        for (i, &t) in idx.iter().enumerate() {
            mass += probs[t];
            if mass >= p {
                idx.truncate(i + 1);
                return (idx, mass);
            }
        }
        if k == v {
            return (idx, mass);
        }
        k = (k * 8).min(v);
    }
}

pub fn nucleus(probs: &[f64], p: f64) -> Nucleus {
    let (idx, mass) = nucleus_indices(probs, p);
    Nucleus {
        tokens: idx.iter().map(|&i| i as TokenId).collect(),
        probs: idx.iter().map(|&i| probs[i] / mass).collect(),
    }
}

/// Stateful top-p sampler; one instance per generation.
#[derive(Debug, Clone)]
pub struct TopPSampler {
    p: f64,
    rng: ChaCha8Rng,
}

impl TopPSampler {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(alloc::format!("top-p threshold {p} outside [0, 1]")));
        }
        Ok(Self { p, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn sample_probs(&mut self, probs: &[f64]) -> TokenId {
        let (idx, mass) = nucleus_indices(probs, self.p);
        let u: f64 = self.rng.random::<f64>() * mass;
        let mut acc = 0.0;
        for &i in &idx {
            acc += probs[i];
            if acc > u {
                return i as TokenId;
            }
        }
        // rounding left `u` at the very top of the mass
        *idx.iter().rev().find(|&&i| probs[i] > 0.0).unwrap_or(&idx[0]) as TokenId
    }

    pub fn sample_logits(&mut self, logits: &[f32]) -> TokenId {
        self.sample_probs(&math::softmax(logits))
    }
}

/// Decode `config.max_new` tokens with nucleus sampling.
pub fn top_p_sample(model: &Model, prompt: &[TokenId], config: &SamplingConfig) -> Result<Generation> {
    config.validate()?;
    let mut sampler = TopPSampler::new(config.p, config.seed)?;
    model.generate_with(prompt, config.max_new, |logits| sampler.sample_logits(logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hand_computed_nucleus() {
        let n = nucleus(&[0.5, 0.3, 0.15, 0.05], 0.6);
        assert_eq!(n.tokens, vec![0, 1]);
        assert!((n.probs[0] - 0.625).abs() < 1e-12);
        assert!((n.probs[1] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_keeps_top_token() {
        let n = nucleus(&[0.1, 0.6, 0.3], 0.0);
        assert_eq!(n.tokens, vec![1]);
        assert_eq!(n.probs, vec![1.0]);
    }

    #[test]
    fn ties_rank_by_id() {
        let n = nucleus(&[0.25, 0.25, 0.25, 0.25], 0.5);
        assert_eq!(n.tokens, vec![0, 1]);
    }

    #[test]
    fn full_threshold_keeps_support() {
        let n = nucleus(&[0.2, 0.0, 0.8], 1.0);
        assert_eq!(n.tokens[..2], [2, 0]);
    }

    #[test]
    fn large_vocab_matches_full_sort() {
        let v = 5000;
        let probs: Vec<f64> = (0..v).map(|i| ((i * 7919) % 1000 + 1) as f64).collect();
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|x| x / total).collect();
        for p in [0.05, 0.5, 0.97] {
            let got = nucleus(&probs, p);
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| rank(&probs, a, b));
            let mut mass = 0.0;
            let mut want = vec![];
            for i in order {
                want.push(i as TokenId);
                mass += probs[i];
                if mass >= p {
                    break;
                }
            }
            assert_eq!(got.tokens, want);
        }
    }

    #[test]
    fn rejects_threshold_outside_unit_interval() {
        assert!(TopPSampler::new(1.5, 0).is_err());
        assert!(TopPSampler::new(-0.1, 0).is_err());
    }

    #[test]
    fn sampler_is_reproducible() {
        let probs = [0.4, 0.3, 0.2, 0.1];
        let draw = |seed| {
            let mut s = TopPSampler::new(1.0, seed).unwrap();
            (0..64).map(|_| s.sample_probs(&probs)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }
}
