//! Parallel drivers over the core analyses. Every result is independent of
//! the number of worker threads.

use loopscope_core::dataset::{Condition, PromptPair};
use loopscope_core::lens::{
    batch_schedule, lens_example, pair_contrasts, summarize, ContrastTrajectory, ExampleCache, LensExample, LensSet,
    LensTrainer, LensTrainingConfig,
};
use loopscope_core::metrics::{aggregate, per_cycle_series, Aggregate, CycleMetricSeries};
use loopscope_core::perturb::{cells, collect, run_cell, PerturbationConfig, SweepResult};
use loopscope_core::{Model, TokenId};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset_io::verify_dataset;
use crate::error::{Error, Result};

/// Seed of one task, derived from the run seed:
/// the first 8 bytes (little endian) of `SHA-256(seed_le ‖ task)`.
pub fn task_seed(seed: u64, task: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn condition_jobs(n: usize) -> Vec<(usize, Condition)> {
    (0..n).flat_map(|i| Condition::ALL.map(|c| (i, c))).collect()
}

fn require_verified(model: &Model, model_id: &str, pairs: &[PromptPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Input("dataset has no pairs".into()));
    }
    let failures = verify_dataset(model, model_id, pairs)?;
    match failures.first() {
        None => Ok(()),
        Some(f) => Err(Error::Input(format!(
            "{} of {} pairs fail verification, first {}: {}",
            failures.len(),
            pairs.len(),
            f.id,
            f.reason
        ))),
    }
}

/// Per-cycle probability/entropy series of every pair and condition, plus
/// the aggregate bands.
pub fn analyze_prob(
    model: &Model,
    model_id: &str,
    pairs: &[PromptPair],
    k_cycles: usize,
) -> Result<(Vec<CycleMetricSeries>, Aggregate)> {
    require_verified(model, model_id, pairs)?;
    let series = condition_jobs(pairs.len())
        .par_iter()
        .map(|&(i, c)| per_cycle_series(model, &pairs[i], c, k_cycles))
        .collect::<Result<Vec<_>, _>>()?;
    let agg = aggregate(&series)?;
    Ok((series, agg))
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub lenses: LensSet,
    /// Mean KL over heads per step.
    pub history: Vec<f64>,
    /// Per-head KL of the first batch, before any update.
    pub initial_kl: Vec<f64>,
}

/// Lens training with per-batch example extraction and per-slot gradients
/// spread over the worker pool. Matches the sequential trainer exactly.
pub fn train_lenses(model: &Model, sequences: &[Vec<TokenId>], config: &LensTrainingConfig) -> Result<TrainingOutcome> {
    let schedule = batch_schedule(sequences.len(), config)?;
    let cache = ExampleCache::new(model, sequences.len(), schedule.len() * config.batch_size);
    let extract = |idx: &[usize]| -> Result<Vec<LensExample>> {
        idx.par_iter().map(|&i| lens_example(model, &sequences[i]).map_err(Error::from)).collect()
    };
    let all: Option<Vec<LensExample>> =
        if cache.is_caching() { Some(extract(&(0..sequences.len()).collect::<Vec<_>>())?) } else { None };
    let mut trainer = LensTrainer::new(model, config);
    for batch_idx in &schedule {
        let owned;
        let batch: Vec<LensExample> = match &all {
            Some(all) => batch_idx.iter().map(|&i| all[i].clone()).collect(),
            None => {
                owned = extract(batch_idx)?;
                owned
            }
        };
        let grads =
            (0..trainer.slot_count()).into_par_iter().map(|slot| trainer.slot_gradient(model, &batch, slot)).collect();
        let step = trainer.steps();
        trainer.apply(grads)?;
        tracing::debug!(step, kl = trainer.history[step], "lens step");
    }
    let history = trainer.history.clone();
    let initial_kl = trainer.head_history.first().cloned().unwrap_or_default();
    Ok(TrainingOutcome { lenses: trainer.finish(100), history, initial_kl })
}

/// Contrast trajectories of every head in both conditions.
pub fn attribute(
    model: &Model,
    model_id: &str,
    lenses: &LensSet,
    pairs: &[PromptPair],
    k_cycles: usize,
) -> Result<Vec<ContrastTrajectory>> {
    lenses.check_complete(model)?;
    require_verified(model, model_id, pairs)?;
    let contrasts = condition_jobs(pairs.len())
        .par_iter()
        .map(|&(i, c)| pair_contrasts(model, lenses, &pairs[i], c, k_cycles))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = model.config();
    Ok(Condition::ALL.iter().flat_map(|&c| summarize(&contrasts, c, cfg.n_layers, cfg.n_heads)).collect())
}

/// Top-p sweep over every cell in parallel.
pub fn perturb(
    model: &Model,
    model_id: &str,
    pairs: &[PromptPair],
    config: &PerturbationConfig,
) -> Result<SweepResult> {
    config.validate()?;
    require_verified(model, model_id, pairs)?;
    let outputs = cells(pairs.len(), config)
        .par_iter()
        .map(|cell| run_cell(model, &pairs[cell.pair], cell, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(collect(outputs, config))
}
