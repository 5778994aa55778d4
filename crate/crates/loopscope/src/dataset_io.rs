//! Corpus reading, dataset construction and the JSON-lines dataset format.

use std::collections::BTreeMap;
use std::path::Path;

use loopscope_core::cycle::{repetition_rate, RepetitionStats};
use loopscope_core::dataset::{
    build_icl, continues_cycle, draft_from_generation, verify_pair, Prompt, PromptPair, MIN_REPS, SCHEMA_VERSION,
};
use loopscope_core::{Model, TokenId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::tokenizer::{truncate_chars, Tokenizer};

/// Corpus sentences: lines with leading whitespace removed, empty lines skipped.
pub fn read_corpus(path: &Path, limit: Option<usize>) -> Result<Vec<String>> {
    let text = read_to_string(path)?;
    let lines: Vec<String> = text
        .lines()
        .map(|l| l.trim_start().trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .take(limit.unwrap_or(usize::MAX))
        .map(String::from)
        .collect();
    if lines.is_empty() {
        return Err(Error::format(path, "corpus has no non-empty lines"));
    }
    Ok(lines)
}

pub fn write_dataset(path: &Path, pairs: &[PromptPair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair).expect("serialisable pair"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Vec<PromptPair>> {
    let text = read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err =
            |e: serde_json::Error| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(line).map_err(parse_err)?;
        let version = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != SCHEMA_VERSION {
            return Err(Error::Schema { path: path.to_path_buf(), found: version, expected: SCHEMA_VERSION });
        }
        pairs.push(serde_json::from_value(value).map_err(parse_err)?);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    EmptyPrompt,
    Tokenizer,
    NoCycle,
    NaturalDiverges,
    IclDiverges,
    ContextOverflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub max_new: usize,
    pub prompt_chars: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { max_new: 300, prompt_chars: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub schema_version: u32,
    pub model_id: String,
    pub options: BuildOptions,
    pub lines: usize,
    /// Raw prompts whose greedy continuation cycles (any length ≥ 1, two repetitions).
    pub raw_repetition: RepetitionStats,
    pub kept: usize,
    pub retention: f64,
    pub extended_prompts: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

enum LineOutcome {
    Kept(Box<PromptPair>, Vec<TokenId>),
    Dropped(DropReason, Option<Vec<TokenId>>),
}

fn build_line(
    model: &Model,
    tok: &Tokenizer,
    model_id: &str,
    index: usize,
    line: &str,
    opts: &BuildOptions,
) -> Result<LineOutcome> {
    let source = truncate_chars(line, opts.prompt_chars);
    let ids = match tok.encode(source) {
        Ok(ids) if ids.is_empty() => return Ok(LineOutcome::Dropped(DropReason::EmptyPrompt, None)),
        Ok(ids) => ids,
        Err(e) => {
            tracing::warn!(line = index + 1, "skipping line: {e}");
            return Ok(LineOutcome::Dropped(DropReason::Tokenizer, None));
        }
    };
    if ids.iter().any(|&t| t as usize >= model.config().vocab_size) {
        tracing::warn!(line = index + 1, "skipping line: token id beyond the model vocabulary");
        return Ok(LineOutcome::Dropped(DropReason::Tokenizer, None));
    }
    if ids.len() + opts.max_new > model.config().max_context {
        return Ok(LineOutcome::Dropped(DropReason::ContextOverflow, None));
    }
    let generation = model.generate_greedy(&ids, opts.max_new)?.tokens;
    let Some(draft) = draft_from_generation(&ids, generation.clone()) else {
        return Ok(LineOutcome::Dropped(DropReason::NoCycle, Some(generation)));
    };
    if !continues_cycle(model, &draft.natural_ids, &draft.cycle.unit)? {
        return Ok(LineOutcome::Dropped(DropReason::NaturalDiverges, Some(generation)));
    }
    let icl = match build_icl(model, &draft)? {
        Ok(ids) => ids,
        Err(_) => return Ok(LineOutcome::Dropped(DropReason::IclDiverges, Some(generation))),
    };
    let text = |ids: &[TokenId]| tok.decode(ids);
    let pair = PromptPair {
        schema_version: SCHEMA_VERSION,
        id: format!("line-{:06}", index + 1),
        source_text: source.to_string(),
        natural_prompt: Prompt { text: text(&draft.natural_ids)?, ids: draft.natural_ids.clone() },
        natural_extension: draft.extension.len(),
        icl_prompt: Prompt { text: text(&icl)?, ids: icl },
        cycle: draft.cycle,
        model_id: model_id.to_string(),
    };
    Ok(LineOutcome::Kept(Box::new(pair), generation))
}

/// Build pairs from corpus lines in parallel; output order follows the input.
pub fn build_dataset(
    model: &Model,
    tok: &Tokenizer,
    model_id: &str,
    lines: &[String],
    opts: &BuildOptions,
) -> Result<(Vec<PromptPair>, BuildReport)> {
    let outcomes = lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| build_line(model, tok, model_id, i, line, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    let mut generations = Vec::new();
    let mut dropped = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            LineOutcome::Kept(pair, generation) => {
                pairs.push(*pair);
                generations.push(generation);
            }
            LineOutcome::Dropped(reason, generation) => {
                *dropped.entry(reason).or_insert(0) += 1;
                generations.extend(generation);
            }
        }
    }
    let raw_repetition = if generations.is_empty() {
        RepetitionStats { total: 0, repetitive: 0, rate: 0.0, histogram: BTreeMap::new() }
    } else {
        repetition_rate(&generations, 1, MIN_REPS)?
    };
    let report = BuildReport {
        schema_version: SCHEMA_VERSION,
        model_id: model_id.to_string(),
        options: opts.clone(),
        lines: lines.len(),
        raw_repetition,
        kept: pairs.len(),
        retention: pairs.len() as f64 / lines.len() as f64,
        extended_prompts: pairs.iter().filter(|p| p.natural_extension > 0).count(),
        dropped,
    };
    Ok((pairs, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyFailure {
    pub id: String,
    pub reason: String,
}

/// Re-check every pair in parallel; returns the failures in dataset order.
pub fn verify_dataset(model: &Model, model_id: &str, pairs: &[PromptPair]) -> Result<Vec<VerifyFailure>> {
    let results: Vec<Option<VerifyFailure>> = pairs
        .par_iter()
        .map(|pair| match verify_pair(model, model_id, pair) {
            Ok(()) => Ok(None),
            Err(loopscope_core::Error::Verification { id, reason }) => Ok(Some(VerifyFailure { id, reason })),
            Err(e) => Err(Error::from(e)),
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Histogram rows `(cycle_length, count)` of the kept pairs' cycles.
pub fn cycle_length_histogram(pairs: &[PromptPair]) -> Vec<(usize, usize)> {
    let mut h = BTreeMap::new();
    for p in pairs {
        *h.entry(p.cycle.len).or_insert(0) += 1;
    }
    h.into_iter().collect()
}
