//! Natural/ICL prompt pairs: construction from greedy runs, verification and
//! the teacher-forcing layout shared by the probability and head analyses.
//!
//! Cycle numbering: cycle 0 is the prompt for the natural condition and the
//! first occurrence of the unit for the ICL condition; cycle `i ≥ 1` is the
//! `i`-th generated repetition of the unit.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cycle::{detect_cycle, CycleAnnotation};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::TokenId;

pub const SCHEMA_VERSION: u32 = 1;

/// Cycles must span more than one token and repeat at least twice.
pub const MIN_CYCLE_LEN: usize = 2;
pub const MIN_REPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Natural,
    Icl,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Natural, Condition::Icl];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Natural => "natural",
            Condition::Icl => "icl",
        }
    }
}

impl core::fmt::Display for Condition {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub schema_version: u32,
    pub id: String,
    pub source_text: String,
    /// Truncated source, extended with model output up to the first cycle token.
    pub natural_prompt: Prompt,
    /// Number of model-generated tokens appended to the truncated source.
    pub natural_extension: usize,
    /// The cycle unit presented twice.
    pub icl_prompt: Prompt,
    /// Annotation of the natural greedy continuation (before extension).
    pub cycle: CycleAnnotation,
    pub model_id: String,
}

impl PromptPair {
    pub fn unit(&self) -> &[TokenId] {
        &self.cycle.unit
    }

    pub fn prompt(&self, condition: Condition) -> &[TokenId] {
        match condition {
            Condition::Natural => &self.natural_prompt.ids,
            Condition::Icl => &self.icl_prompt.ids,
        }
    }
}

/// Natural prompt whose greedy continuation cycles from its first token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draft {
    pub prompt_ids: Vec<TokenId>,
    pub natural_ids: Vec<TokenId>,
    pub extension: Vec<TokenId>,
    pub cycle: CycleAnnotation,
    pub continuation: Vec<TokenId>,
}

/// Greedy-generate from `prompt_ids` and keep the prompt when the
/// continuation cycles (length ≥ 2, at least two repetitions, persisting to
/// the end of the window). Returns `Ok(None)` for non-cyclic continuations.
pub fn build_natural(model: &Model, prompt_ids: &[TokenId], max_new: usize) -> Result<Option<Draft>> {
    let max = model.config().max_context;
    if prompt_ids.len() + max_new > max {
        return Err(Error::ContextOverflow { len: prompt_ids.len() + max_new, max });
    }
    let generation = model.generate_greedy(prompt_ids, max_new)?;
    Ok(draft_from_generation(prompt_ids, generation.tokens))
}

/// Draft from an already generated greedy continuation of `prompt_ids`.
pub fn draft_from_generation(prompt_ids: &[TokenId], continuation: Vec<TokenId>) -> Option<Draft> {
    let cycle = detect_cycle(&continuation, MIN_CYCLE_LEN, MIN_REPS)?;
    let extension = continuation[..cycle.start].to_vec();
    let mut natural_ids = prompt_ids.to_vec();
    natural_ids.extend_from_slice(&extension);
    Some(Draft { prompt_ids: prompt_ids.to_vec(), natural_ids, extension, cycle, continuation })
}

pub fn icl_ids(unit: &[TokenId]) -> Vec<TokenId> {
    let mut ids = unit.to_vec();
    ids.extend_from_slice(unit);
    ids
}

fn repeats_unit(generated: &[TokenId], unit: &[TokenId], times: usize) -> bool {
    generated.len() >= unit.len() * times && generated.chunks(unit.len()).take(times).all(|c| c == unit)
}

/// Check that greedy decoding after `prompt` yields the unit twice.
pub fn continues_cycle(model: &Model, prompt: &[TokenId], unit: &[TokenId]) -> Result<bool> {
    let generated = model.generate_greedy(prompt, 2 * unit.len())?.tokens;
    Ok(repeats_unit(&generated, unit, 2))
}

/// ICL prompt of a draft, or the reason it was dropped.
pub fn build_icl(model: &Model, draft: &Draft) -> Result<core::result::Result<Vec<TokenId>, String>> {
    let ids = icl_ids(&draft.cycle.unit);
    if continues_cycle(model, &ids, &draft.cycle.unit)? {
        Ok(Ok(ids))
    } else {
        Ok(Err(String::from("icl continuation diverges from the cycle")))
    }
}

/// Re-check every pairing invariant of `pair` against `model`.
pub fn verify_pair(model: &Model, model_id: &str, pair: &PromptPair) -> Result<()> {
    let fail = |reason: String| Err(Error::Verification { id: pair.id.clone(), reason });
    if pair.model_id != model_id {
        return fail(format!("built for model {}, checked against {}", pair.model_id, model_id));
    }
    let unit = pair.unit();
    if unit.len() < MIN_CYCLE_LEN || unit.len() != pair.cycle.len {
        return fail(format!("cycle unit of length {} is invalid", unit.len()));
    }
    if pair.icl_prompt.ids != icl_ids(unit) {
        return fail("icl prompt is not the unit presented twice".into());
    }
    for condition in Condition::ALL {
        if !continues_cycle(model, pair.prompt(condition), unit)? {
            return fail(format!("{condition} prompt does not continue the cycle"));
        }
    }
    Ok(())
}

/// Token layout for teacher-forced scoring of one pair in one condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclePlan {
    /// Prompt followed by the greedy continuation.
    pub tokens: Vec<TokenId>,
    pub prompt_len: usize,
    /// Generated cycles that reproduce the unit exactly.
    pub completed_cycles: usize,
    /// `(cycle index, position)`; the logits at `position` predict
    /// `tokens[position + 1]`.
    pub targets: Vec<(usize, usize)>,
}

impl CyclePlan {
    pub fn positions(&self) -> Vec<usize> {
        self.targets.iter().map(|&(_, p)| p).collect()
    }

    pub fn cycle_count(&self) -> usize {
        self.completed_cycles + 1
    }
}

/// Greedy-continue the pair's prompt for up to `k_cycles` cycles and list the
/// scored positions of cycles `0..=k`. Cycles after the first one that
/// deviates from the unit are not scored; `k` is also reduced so the whole
/// sequence fits the context window.
pub fn plan_cycles(model: &Model, pair: &PromptPair, condition: Condition, k_cycles: usize) -> Result<CyclePlan> {
    let prompt = pair.prompt(condition);
    let n = pair.unit().len();
    let max = model.config().max_context;
    if prompt.len() + n > max {
        return Err(Error::ContextOverflow { len: prompt.len() + n, max });
    }
    let k = k_cycles.min((max - prompt.len()) / n);
    let mut tokens = prompt.to_vec();
    let mut completed = 0;
    if k > 0 {
        let generated = model.generate_greedy(prompt, k * n)?.tokens;
        completed = generated.chunks(n).take_while(|c| *c == pair.unit()).count();
        tokens.extend_from_slice(&generated[..completed * n]);
    }
    let p = prompt.len();
    let cycle0_end = match condition {
        Condition::Natural => p,
        Condition::Icl => n,
    };
    let mut targets: Vec<(usize, usize)> = (0..cycle0_end - 1).map(|pos| (0, pos)).collect();
    for c in 1..=completed {
        let first = p + (c - 1) * n;
        targets.extend((first - 1..first + n - 1).map(|pos| (c, pos)));
    }
    Ok(CyclePlan { tokens, prompt_len: p, completed_cycles: completed, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_toy_model;
    use alloc::vec;

    #[test]
    fn icl_prompt_is_unit_twice() {
        assert_eq!(icl_ids(&[10, 11, 12]), vec![10, 11, 12, 10, 11, 12]);
    }

    #[test]
    fn unit_repetition_check() {
        assert!(repeats_unit(&[1, 2, 1, 2, 9], &[1, 2], 2));
        assert!(!repeats_unit(&[1, 2, 1, 3], &[1, 2], 2));
        assert!(!repeats_unit(&[1, 2], &[1, 2], 2));
    }

    #[test]
    fn natural_draft_starts_cycle_immediately() {
        let model = build_toy_model(8);
        let prompt: Vec<TokenId> = b"The quick brown fox jumps over".iter().map(|&b| b as TokenId).collect();
        let draft = build_natural(&model, &prompt, 300).unwrap().expect("toy model cycles here");
        assert_eq!(draft.natural_ids.len(), prompt.len() + draft.cycle.start);
        assert!(continues_cycle(&model, &draft.natural_ids, &draft.cycle.unit).unwrap());
    }
}
