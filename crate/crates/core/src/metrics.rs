//! Selected-token probability and entropy traces, averaged per cycle and
//! aggregated across pairs with percentile bands.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{plan_cycles, Condition, PromptPair};
use crate::error::{Error, Result};
use crate::math;
use crate::model::Model;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenMetrics {
    pub probability: f64,
    /// Entropy of the next-token distribution, in nats.
    pub entropy: f64,
}

/// Probability and entropy of `target` from raw logits.
pub fn metrics_from_logits(logits: &[f32], target: TokenId) -> Result<TokenMetrics> {
    if target as usize >= logits.len() {
        return Err(Error::TokenOutOfRange { id: target, vocab_size: logits.len() });
    }
    let lse = math::log_sum_exp(logits);
    Ok(TokenMetrics {
        probability: libm::exp(logits[target as usize] as f64 - lse),
        entropy: math::entropy_from_logits(logits),
    })
}

/// Probability the model assigns to `target` after `context`, and the entropy
/// of that distribution.
pub fn token_metrics(model: &Model, context: &[TokenId], target: TokenId) -> Result<TokenMetrics> {
    if target as usize >= model.config().vocab_size {
        return Err(Error::TokenOutOfRange { id: target, vocab_size: model.config().vocab_size });
    }
    metrics_from_logits(&model.final_logits(context)?, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclePoint {
    pub cycle: usize,
    pub mean_prob: f64,
    pub mean_entropy: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetricSeries {
    pub pair_id: String,
    pub condition: Condition,
    /// Contiguous from cycle 0.
    pub cycles: Vec<CyclePoint>,
}

/// Teacher-forced per-cycle means over the greedy continuation of one pair.
pub fn per_cycle_series(
    model: &Model,
    pair: &PromptPair,
    condition: Condition,
    k_cycles: usize,
) -> Result<CycleMetricSeries> {
    let plan = plan_cycles(model, pair, condition, k_cycles)?;
    let logits = model.logits_all(&plan.tokens)?;
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); plan.cycle_count()];
    for &(cycle, pos) in &plan.targets {
        let m = metrics_from_logits(&logits[pos], plan.tokens[pos + 1])?;
        let s = &mut sums[cycle];
        s.0 += m.probability;
        s.1 += m.entropy;
        s.2 += 1;
    }
    let cycles = sums
        .into_iter()
        .enumerate()
        .map(|(cycle, (p, h, n))| {
            let denom = n as f64;
            CyclePoint {
                cycle,
                mean_prob: if n > 0 { p / denom } else { f64::NAN },
                mean_entropy: if n > 0 { h / denom } else { f64::NAN },
                tokens: n,
            }
        })
        .collect();
    Ok(CycleMetricSeries { pair_id: pair.id.clone(), condition, cycles })
}

/// Percentile with linear interpolation between closest ranks, `q ∈ [0, 1]`.
/// `sorted` must be ascending and nonempty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
}

impl Band {
    /// Mean and 5th/95th percentiles of nonempty `values`.
    pub fn of(values: &[f64]) -> Band {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Band {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p5: percentile_sorted(&sorted, 0.05),
            p95: percentile_sorted(&sorted, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub condition: Condition,
    pub cycle: usize,
    pub count: usize,
    pub prob: Band,
    pub entropy: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    /// Some series stop before the longest one.
    pub ragged: bool,
}

/// Per-condition, per-cycle mean and 5–95 % band. Each cycle index pools the
/// series that reach it; cycles with no scored tokens are skipped.
pub fn aggregate(series: &[CycleMetricSeries]) -> Result<Aggregate> {
    if series.is_empty() {
        return Err(Error::Argument("aggregate over an empty series list".into()));
    }
    let mut rows = Vec::new();
    let mut ragged = false;
    for condition in Condition::ALL {
        let subset: Vec<&CycleMetricSeries> = series.iter().filter(|s| s.condition == condition).collect();
        let longest = subset.iter().map(|s| s.cycles.len()).max().unwrap_or(0);
        ragged |= subset.iter().any(|s| s.cycles.len() != longest);
        for cycle in 0..longest {
            let points: Vec<&CyclePoint> =
                subset.iter().filter_map(|s| s.cycles.get(cycle)).filter(|p| p.tokens > 0).collect();
            if points.is_empty() {
                continue;
            }
            let probs: Vec<f64> = points.iter().map(|p| p.mean_prob).collect();
            let ents: Vec<f64> = points.iter().map(|p| p.mean_entropy).collect();
            rows.push(AggregateRow {
                condition,
                cycle,
                count: points.len(),
                prob: Band::of(&probs),
                entropy: Band::of(&ents),
            });
        }
    }
    Ok(Aggregate { rows, ragged })
}
