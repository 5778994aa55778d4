//! Top-p perturbation sweep: sample continuations of the stored prompts with
//! `c` extra copies of the cycle unit appended, and measure whether the
//! output still loops and how close its loop is to the greedy one.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cycle::{detect_cycle, find_tandem_repeat, CycleAnnotation};
use crate::dataset::{Condition, PromptPair, MIN_CYCLE_LEN, MIN_REPS};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rouge::rouge_l;
use crate::sampling::{top_p_sample, SamplingConfig};
use crate::TokenId;

/// What counts as a repetitive sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepeatRule {
    /// Unit followed by at least one echo, periodic through the end of the
    /// sample.
    #[default]
    Persistent,
    /// Any unit immediately followed by one echo, anywhere in the sample.
    FirstEcho,
}

impl RepeatRule {
    pub fn as_str(self) -> &'static str {
        match self {
            RepeatRule::Persistent => "persistent",
            RepeatRule::FirstEcho => "first-echo",
        }
    }

    pub fn detect(self, tokens: &[TokenId], min_cycle_len: usize) -> Option<CycleAnnotation> {
        match self {
            RepeatRule::Persistent => detect_cycle(tokens, min_cycle_len, MIN_REPS),
            RepeatRule::FirstEcho => find_tandem_repeat(tokens, min_cycle_len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub p_grid: Vec<f64>,
    pub cycle_grid: Vec<usize>,
    pub seed: u64,
    pub max_new: usize,
    pub samples_per_prompt: usize,
    pub repeat_rule: RepeatRule,
    pub min_cycle_len: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            p_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            cycle_grid: (0..=6).collect(),
            seed: 0,
            max_new: 300,
            samples_per_prompt: 1,
            repeat_rule: RepeatRule::default(),
            min_cycle_len: MIN_CYCLE_LEN,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_grid.is_empty() || self.cycle_grid.is_empty() {
            return Err(Error::Argument("empty p or cycle grid".into()));
        }
        if let Some(p) = self.p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(alloc::format!("top-p threshold {p} outside [0, 1]")));
        }
        if self.max_new == 0 || self.samples_per_prompt == 0 || self.min_cycle_len == 0 {
            return Err(Error::Argument("max_new, samples_per_prompt and min_cycle_len must be positive".into()));
        }
        Ok(())
    }
}

/// One sampled continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub pair_id: String,
    pub condition: Condition,
    pub cycles_in_prompt: usize,
    pub p: f64,
    pub sample: usize,
    pub seed: u64,
    pub repetitive: bool,
    pub rouge_l: f64,
    pub detected: Option<CycleAnnotation>,
    pub tokens: Vec<TokenId>,
}

/// Coordinates of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub pair: usize,
    pub condition: Condition,
    pub cycles_in_prompt: usize,
    pub p: f64,
    pub sample: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator seed of a cell: SplitMix64 folded over the run seed, the pair
/// id bytes, the condition, `c`, the bits of `p` and the sample index.
pub fn derive_seed(
    seed: u64,
    pair_id: &str,
    condition: Condition,
    cycles_in_prompt: usize,
    p: f64,
    sample: usize,
) -> u64 {
    let mut h = splitmix(seed);
    let mut mix = |v: u64| h = splitmix(h ^ v);
    for chunk in pair_id.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        mix(u64::from_le_bytes(buf));
    }
    mix(pair_id.len() as u64);
    mix(condition as u64);
    mix(cycles_in_prompt as u64);
    mix(p.to_bits());
    mix(sample as u64);
    h
}

/// Stored prompt followed by `c` extra copies of the unit.
pub fn perturbation_prompt(pair: &PromptPair, condition: Condition, cycles_in_prompt: usize) -> Vec<TokenId> {
    let mut ids = pair.prompt(condition).to_vec();
    for _ in 0..cycles_in_prompt {
        ids.extend_from_slice(pair.unit());
    }
    ids
}

/// Repetition flag, ROUGE-L against the greedy unit, and the detected cycle.
/// Without a cycle the first `2n` generated tokens are the candidate.
pub fn score_generation(
    unit: &[TokenId],
    generated: &[TokenId],
    rule: RepeatRule,
    min_cycle_len: usize,
) -> Result<(bool, f64, Option<CycleAnnotation>)> {
    let detected = rule.detect(generated, min_cycle_len);
    let score = match &detected {
        Some(c) => rouge_l(unit, &c.unit)?,
        None => rouge_l(unit, &generated[..generated.len().min(2 * unit.len())])?,
    };
    Ok((detected.is_some(), score, detected))
}

/// Every cell of the sweep in a fixed order.
pub fn cells(n_pairs: usize, config: &PerturbationConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for pair in 0..n_pairs {
        for condition in Condition::ALL {
            for &c in &config.cycle_grid {
                for &p in &config.p_grid {
                    for sample in 0..config.samples_per_prompt {
                        out.push(Cell { pair, condition, cycles_in_prompt: c, p, sample });
                    }
                }
            }
        }
    }
    out
}

/// Sample one cell; `Ok(None)` when the prompt plus `max_new` exceeds the
/// context window.
pub fn run_cell(
    model: &Model,
    pair: &PromptPair,
    cell: &Cell,
    config: &PerturbationConfig,
) -> Result<Option<PerturbationRecord>> {
    let prompt = perturbation_prompt(pair, cell.condition, cell.cycles_in_prompt);
    if prompt.len() + config.max_new > model.config().max_context {
        return Ok(None);
    }
    let seed = derive_seed(config.seed, &pair.id, cell.condition, cell.cycles_in_prompt, cell.p, cell.sample);
    let sampling = SamplingConfig { p: cell.p, seed, max_new: config.max_new, samples_per_prompt: 1 };
    let tokens = top_p_sample(model, &prompt, &sampling)?.tokens;
    let (repetitive, rouge, detected) =
        score_generation(pair.unit(), &tokens, config.repeat_rule, config.min_cycle_len)?;
    Ok(Some(PerturbationRecord {
        pair_id: pair.id.clone(),
        condition: cell.condition,
        cycles_in_prompt: cell.cycles_in_prompt,
        p: cell.p,
        sample: cell.sample,
        seed,
        repetitive,
        rouge_l: rouge,
        detected,
        tokens,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationAggregate {
    pub condition: Condition,
    pub cycles_in_prompt: usize,
    pub p: f64,
    pub proportion_repetitive: f64,
    pub mean_rouge_l: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<PerturbationRecord>,
    /// Cells dropped for exceeding the context window.
    pub skipped: usize,
    pub aggregates: Vec<PerturbationAggregate>,
}

/// Per `(condition, c, p)` proportion repetitive and mean ROUGE-L, in grid
/// order; cells without records are omitted.
pub fn aggregate_records(records: &[PerturbationRecord], config: &PerturbationConfig) -> Vec<PerturbationAggregate> {
    let mut out = Vec::new();
    for condition in Condition::ALL {
        for &c in &config.cycle_grid {
            for &p in &config.p_grid {
                let group: Vec<&PerturbationRecord> = records
                    .iter()
                    .filter(|r| r.condition == condition && r.cycles_in_prompt == c && r.p.to_bits() == p.to_bits())
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let n = group.len() as f64;
                out.push(PerturbationAggregate {
                    condition,
                    cycles_in_prompt: c,
                    p,
                    proportion_repetitive: group.iter().filter(|r| r.repetitive).count() as f64 / n,
                    mean_rouge_l: group.iter().map(|r| r.rouge_l).sum::<f64>() / n,
                    count: group.len(),
                });
            }
        }
    }
    out
}

/// Assemble cell outputs (in [`cells`] order) into a sweep result.
pub fn collect(outputs: Vec<Option<PerturbationRecord>>, config: &PerturbationConfig) -> SweepResult {
    let skipped = outputs.iter().filter(|o| o.is_none()).count();
    let records: Vec<PerturbationRecord> = outputs.into_iter().flatten().collect();
    let aggregates = aggregate_records(&records, config);
    SweepResult { records, skipped, aggregates }
}

/// Sequential sweep over every pair, condition, `c`, `p` and sample.
pub fn sweep(model: &Model, pairs: &[PromptPair], config: &PerturbationConfig) -> Result<SweepResult> {
    config.validate()?;
    let outputs = cells(pairs.len(), config)
        .iter()
        .map(|cell| run_cell(model, &pairs[cell.pair], cell, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(outputs, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn seeds_differ_per_coordinate() {
        let base = derive_seed(1, "a", Condition::Natural, 0, 0.5, 0);
        assert_eq!(base, derive_seed(1, "a", Condition::Natural, 0, 0.5, 0));
        for other in [
            derive_seed(2, "a", Condition::Natural, 0, 0.5, 0),
            derive_seed(1, "b", Condition::Natural, 0, 0.5, 0),
            derive_seed(1, "a", Condition::Icl, 0, 0.5, 0),
            derive_seed(1, "a", Condition::Natural, 1, 0.5, 0),
            derive_seed(1, "a", Condition::Natural, 0, 0.6, 0),
            derive_seed(1, "a", Condition::Natural, 0, 0.5, 1),
        ] {
            assert_ne!(base, other);
        }
    }

    #[test]
    fn repetitive_sample_scores_one() {
        let unit = [4, 5, 6];
        let gen = [4, 5, 6, 4, 5, 6, 4, 5];
        let (rep, score, _) = score_generation(&unit, &gen, RepeatRule::Persistent, 2).unwrap();
        assert!(rep);
        assert_eq!(score, 1.0);
    }

    #[test]
    fn non_repetitive_sample_uses_window() {
        let unit = [1, 2];
        let gen = [1, 9, 8, 7, 6, 5];
        let (rep, score, det) = score_generation(&unit, &gen, RepeatRule::Persistent, 2).unwrap();
        assert!(!rep && det.is_none());
        // window [1, 9, 8, 7]: LCS 1, R = 1/2, P = 1/4
        assert!((score - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn first_echo_accepts_broken_loop() {
        let gen = [7, 1, 2, 1, 2, 9, 8, 3];
        assert!(RepeatRule::Persistent.detect(&gen, 2).is_none());
        let c = RepeatRule::FirstEcho.detect(&gen, 2).unwrap();
        assert_eq!(c.unit, vec![1, 2]);
    }

    #[test]
    fn grid_validation() {
        assert!(PerturbationConfig::default().validate().is_ok());
        let bad = PerturbationConfig { p_grid: vec![1.2], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
