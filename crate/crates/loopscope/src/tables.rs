//! CSV schemas of every analysis output (see `docs/formats.md`).

use std::path::Path;

use loopscope_core::dataset::Condition;
use loopscope_core::lens::ContrastTrajectory;
use loopscope_core::metrics::Aggregate;
use loopscope_core::perturb::PerturbationAggregate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const PROB_ENTROPY_CSV: &str = "prob_entropy.csv";
pub const HEAD_CONTRAST_CSV: &str = "head_contrast.csv";
pub const PERTURBATION_CSV: &str = "perturbation.csv";
pub const CYCLE_HISTOGRAM_CSV: &str = "cycle_histogram.csv";
pub const LENS_TRAINING_CSV: &str = "lens_training.csv";
pub const LENS_KL_CSV: &str = "lens_kl.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEntropyRow {
    pub condition: Condition,
    pub cycle_index: usize,
    pub mean_prob: f64,
    pub p5_prob: f64,
    pub p95_prob: f64,
    pub mean_entropy: f64,
    pub p5_entropy: f64,
    pub p95_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadContrastRow {
    pub condition: Condition,
    pub layer: usize,
    pub head: usize,
    pub cycle: usize,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub condition: Condition,
    pub cycles_in_prompt: usize,
    pub p: f64,
    pub proportion_repetitive: f64,
    pub mean_rouge_l: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub cycle_length: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub step: usize,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensKlRow {
    pub layer: usize,
    pub head: usize,
    pub initial_kl: f64,
    pub final_kl: f64,
}

pub fn prob_entropy_rows(agg: &Aggregate) -> Vec<ProbEntropyRow> {
    agg.rows
        .iter()
        .map(|r| ProbEntropyRow {
            condition: r.condition,
            cycle_index: r.cycle,
            mean_prob: r.prob.mean,
            p5_prob: r.prob.p5,
            p95_prob: r.prob.p95,
            mean_entropy: r.entropy.mean,
            p5_entropy: r.entropy.p5,
            p95_entropy: r.entropy.p95,
        })
        .collect()
}

/// Cycles without data are left out.
pub fn head_contrast_rows(trajectories: &[ContrastTrajectory]) -> Vec<HeadContrastRow> {
    trajectories
        .iter()
        .flat_map(|t| {
            t.mean.iter().zip(&t.count).enumerate().filter(|(_, (_, &n))| n > 0).map(move |(cycle, (&m, _))| {
                HeadContrastRow { condition: t.condition, layer: t.layer, head: t.head, cycle, contrast: m }
            })
        })
        .collect()
}

pub fn perturbation_rows(aggs: &[PerturbationAggregate]) -> Vec<PerturbationRow> {
    aggs.iter()
        .map(|a| PerturbationRow {
            condition: a.condition,
            cycles_in_prompt: a.cycles_in_prompt,
            p: a.p,
            proportion_repetitive: a.proportion_repetitive,
            mean_rouge_l: a.mean_rouge_l,
            count: a.count,
        })
        .collect()
}

pub fn to_csv<R: Serialize>(rows: &[R], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Input(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Input(e.to_string()))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R], header: &[&str]) -> Result<()> {
    write_atomic(path, &to_csv(rows, header)?)
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 2, message: e.to_string() }))
        .collect()
}

pub const PROB_ENTROPY_HEADER: &[&str] =
    &["condition", "cycle_index", "mean_prob", "p5_prob", "p95_prob", "mean_entropy", "p5_entropy", "p95_entropy"];
pub const HEAD_CONTRAST_HEADER: &[&str] = &["condition", "layer", "head", "cycle", "contrast"];
pub const PERTURBATION_HEADER: &[&str] =
    &["condition", "cycles_in_prompt", "p", "proportion_repetitive", "mean_rouge_l", "count"];
pub const HISTOGRAM_HEADER: &[&str] = &["cycle_length", "count"];
pub const TRAINING_HEADER: &[&str] = &["step", "mean_kl"];
pub const LENS_KL_HEADER: &[&str] = &["layer", "head", "initial_kl", "final_kl"];
