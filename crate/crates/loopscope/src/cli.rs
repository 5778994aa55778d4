//! Command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use loopscope_core::dataset::{Condition, PromptPair};
use loopscope_core::lens::{rank_heads, LensSharing, LensTrainingConfig};
use loopscope_core::model::toy::build_toy_weights;
use loopscope_core::perturb::{PerturbationConfig, RepeatRule};
use loopscope_core::TokenId;
use serde::Serialize;

use crate::archive::{self, load_model, LoadedModel};
use crate::dataset_io::{self, BuildOptions};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::manifest::Manifest;
use crate::pipeline::{self, task_seed};
use crate::plots;
use crate::report::{self, BUILD_REPORT_FILE, HEAD_RANKING_FILE};
use crate::tables::*;
use crate::tokenizer::Tokenizer;

pub const MODEL_DIR_ENV: &str = "LOOPSCOPE_MODEL_DIR";

#[derive(Debug, Parser)]
#[command(name = "loopscope", version, about = "Repetition-loop analysis for GPT-NeoX models")]
pub struct Cli {
    /// Run seed; every random choice is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the seeded toy model.
    ToyModel(ToyArgs),
    /// Build natural/ICL prompt pairs from a corpus.
    BuildDataset(BuildArgs),
    /// Re-check every pair of a dataset against a model.
    Verify(VerifyArgs),
    /// Probability and entropy per cycle.
    AnalyzeProb(ProbArgs),
    /// Train head lenses.
    TrainLens(LensArgs),
    /// Per-head contrast trajectories.
    AttributeHeads(AttributeArgs),
    /// Top-p perturbation sweep.
    Perturb(PerturbArgs),
    /// Summarise a run directory as report.html.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArg {
    /// Directory with model.safetensors and config.json.
    #[arg(long, env = MODEL_DIR_ENV)]
    pub model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArg,
    /// Use at most this many corpus lines.
    #[arg(long)]
    pub lines: Option<usize>,
    /// Dataset file (JSON lines); reports go next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub max_new: usize,
    /// Prompt length in characters.
    #[arg(long, default_value_t = 50)]
    pub prompt_chars: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArg,
}

#[derive(Debug, Args, Serialize)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip SVG figures.
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Score cycles 0..=K.
    #[arg(long, default_value_t = 7)]
    pub cycles: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct LensArgs {
    /// Training corpus, one sequence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Truncate each training sequence to this many tokens.
    #[arg(long, default_value_t = 128)]
    pub max_tokens: usize,
    /// Skip this many corpus lines first.
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    /// Leave out corpus lines that begin with a source sentence of this dataset.
    #[arg(long)]
    pub exclude_dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Train for exactly this many steps, cycling epochs.
    #[arg(long)]
    pub steps: Option<usize>,
    /// One lens per layer instead of per head.
    #[arg(long)]
    pub share_per_layer: bool,
    /// One bias shared by all lenses.
    #[arg(long)]
    pub global_bias: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArg,
    /// Lens archive (default: OUT/lenses.safetensors).
    #[arg(long)]
    pub lenses: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 7)]
    pub cycles: usize,
    /// Heads listed at each end of the ranking.
    #[arg(long, default_value_t = 2)]
    pub top: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepeatRuleArg {
    Persistent,
    FirstEcho,
}

impl From<RepeatRuleArg> for RepeatRule {
    fn from(r: RepeatRuleArg) -> Self {
        match r {
            RepeatRuleArg::Persistent => RepeatRule::Persistent,
            RepeatRuleArg::FirstEcho => RepeatRule::FirstEcho,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub p_grid: Vec<f64>,
    /// Extra copies of the cycle unit appended to the prompt.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
    pub cycles: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    pub max_new: usize,
    /// Samples per (pair, condition, cycles, p).
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = RepeatRuleArg::Persistent)]
    pub repeat_rule: RepeatRuleArg,
    /// Also write every sample to perturbation_records.jsonl.
    #[arg(long)]
    pub records: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Run directory to summarise.
    #[arg(long)]
    pub out: PathBuf,
}

pub const RECORDS_FILE: &str = "perturbation_records.jsonl";
pub const CYCLE_K_NOTE: &str = "cycle 0 is the prompt (natural) or the first unit occurrence (icl); cycles past the first deviation from the unit are not scored";

fn open_model(arg: &ModelArg, manifest: &mut Manifest) -> Result<LoadedModel> {
    let loaded = load_model(&arg.model)?;
    manifest.input("weights", &arg.model.join(archive::WEIGHTS_FILE))?;
    manifest.input("config", &arg.model.join(archive::CONFIG_FILE))?;
    manifest.note("model_id", &loaded.model_id);
    Ok(loaded)
}

fn open_dataset(path: &Path, manifest: &mut Manifest) -> Result<Vec<PromptPair>> {
    let pairs = dataset_io::read_dataset(path)?;
    manifest.input("dataset", path)?;
    Ok(pairs)
}

fn emit_csv<R: Serialize>(m: &mut Manifest, dir: &Path, name: &str, rows: &[R], header: &[&str]) -> Result<()> {
    let path = dir.join(name);
    write_csv(&path, rows, header)?;
    m.output(name, &path)
}

fn emit_svg(m: &mut Manifest, out: &OutputArgs, name: &str, svg: impl FnOnce() -> String) -> Result<()> {
    if out.no_svg {
        return Ok(());
    }
    let path = out.out.join(name);
    write_atomic(&path, svg().as_bytes())?;
    m.output(name, &path)
}

fn emit_json(m: &mut Manifest, dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    m.output(name, &path)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn toy_model(seed: u64, args: &ToyArgs) -> Result<()> {
    let mut m = Manifest::new("toy-model", seed, args);
    let (config, weights) = build_toy_weights(seed);
    archive::save_model(&args.out, &config, &weights)?;
    m.output("weights", &args.out.join(archive::WEIGHTS_FILE))?;
    m.output("config", &args.out.join(archive::CONFIG_FILE))?;
    m.note("tokenizer", "bytes (no tokenizer files)");
    m.write(&args.out)?;
    Ok(())
}

fn build_dataset(seed: u64, args: &BuildArgs) -> Result<()> {
    let mut m = Manifest::new("build-dataset", seed, args);
    let loaded = open_model(&args.model, &mut m)?;
    let tok = Tokenizer::from_dir(&args.model.model)?;
    m.note("tokenizer", if tok.is_bytes() { "bytes" } else { "bpe" });
    let lines = dataset_io::read_corpus(&args.corpus, args.lines)?;
    m.input("corpus", &args.corpus)?;
    let opts = BuildOptions { max_new: args.max_new, prompt_chars: args.prompt_chars };
    let (pairs, build) = dataset_io::build_dataset(&loaded.model, &tok, &loaded.model_id, &lines, &opts)?;
    tracing::info!(kept = build.kept, lines = build.lines, "dataset built");
    let dir = parent_dir(&args.out);
    dataset_io::write_dataset(&args.out, &pairs)?;
    m.output("dataset", &args.out)?;
    emit_json(&mut m, &dir, BUILD_REPORT_FILE, &build)?;
    let hist: Vec<HistogramRow> = dataset_io::cycle_length_histogram(&pairs)
        .into_iter()
        .map(|(cycle_length, count)| HistogramRow { cycle_length, count })
        .collect();
    emit_csv(&mut m, &dir, CYCLE_HISTOGRAM_CSV, &hist, HISTOGRAM_HEADER)?;
    m.note("raw_repetition", "greedy continuation of every tokenised line, cycles of any length with two repetitions");
    m.write(&dir)?;
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<()> {
    let loaded = load_model(&args.model.model)?;
    let pairs = dataset_io::read_dataset(&args.dataset)?;
    let failures = dataset_io::verify_dataset(&loaded.model, &loaded.model_id, &pairs)?;
    for f in &failures {
        println!("{}", serde_json::to_string(f).expect("plain record"));
    }
    if failures.is_empty() {
        println!("{} pairs verified", pairs.len());
        Ok(())
    } else {
        Err(Error::Input(format!("{} of {} pairs failed verification", failures.len(), pairs.len())))
    }
}

fn analyze_prob(seed: u64, args: &ProbArgs) -> Result<()> {
    let mut m = Manifest::new("analyze-prob", seed, args);
    let loaded = open_model(&args.model, &mut m)?;
    let pairs = open_dataset(&args.dataset, &mut m)?;
    let (_, agg) = pipeline::analyze_prob(&loaded.model, &loaded.model_id, &pairs, args.cycles)?;
    let rows = prob_entropy_rows(&agg);
    emit_csv(&mut m, &args.output.out, PROB_ENTROPY_CSV, &rows, PROB_ENTROPY_HEADER)?;
    emit_svg(&mut m, &args.output, "prob_entropy.svg", || plots::prob_entropy_svg(&rows))?;
    m.note("cycles", CYCLE_K_NOTE);
    m.note("ragged", agg.ragged);
    m.write(&args.output.out)?;
    Ok(())
}

/// Training sequences: corpus lines after `skip`, minus excluded sources,
/// tokenised and truncated.
fn lens_corpus(args: &LensArgs, tok: &Tokenizer, vocab: usize, max_context: usize) -> Result<Vec<Vec<TokenId>>> {
    let excluded: Vec<String> = match &args.exclude_dataset {
        Some(p) => dataset_io::read_dataset(p)?.into_iter().map(|pair| pair.source_text).collect(),
        None => Vec::new(),
    };
    let lines = dataset_io::read_corpus(&args.corpus, None)?;
    let limit = args.max_tokens.min(max_context);
    let mut out = Vec::with_capacity(args.samples);
    for line in lines.iter().skip(args.skip) {
        if out.len() == args.samples {
            break;
        }
        if excluded.iter().any(|s| line.starts_with(s.as_str())) {
            continue;
        }
        let mut ids = match tok.encode(line) {
            Ok(ids) => ids,
            Err(e) => {
                tracing::warn!("skipping training line: {e}");
                continue;
            }
        };
        ids.truncate(limit);
        if !ids.is_empty() && ids.iter().all(|&t| (t as usize) < vocab) {
            out.push(ids);
        }
    }
    Ok(out)
}

fn train_lens(seed: u64, args: &LensArgs) -> Result<()> {
    let mut m = Manifest::new("train-lens", seed, args);
    let loaded = open_model(&args.model, &mut m)?;
    let tok = Tokenizer::from_dir(&args.model.model)?;
    m.input("corpus", &args.corpus)?;
    if let Some(p) = &args.exclude_dataset {
        m.input("excluded", p)?;
    }
    let cfg = loaded.model.config();
    let seqs = lens_corpus(args, &tok, cfg.vocab_size, cfg.max_context)?;
    if seqs.len() < args.samples {
        tracing::warn!(found = seqs.len(), wanted = args.samples, "training corpus is short");
    }
    let tcfg = LensTrainingConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        max_steps: args.steps,
        sharing: LensSharing { per_layer: args.share_per_layer, global_bias: args.global_bias },
        seed: task_seed(seed, "train-lens"),
    };
    let outcome = pipeline::train_lenses(&loaded.model, &seqs, &tcfg)?;
    let dir = &args.out;
    let lens_path = dir.join(archive::LENS_FILE);
    let extra = BTreeMap::from([("model_id".to_string(), loaded.model_id.clone())]);
    archive::save_lenses(&lens_path, &outcome.lenses, &extra)?;
    m.output("lenses", &lens_path)?;
    let training: Vec<TrainingRow> =
        outcome.history.iter().enumerate().map(|(step, &mean_kl)| TrainingRow { step, mean_kl }).collect();
    emit_csv(&mut m, dir, LENS_TRAINING_CSV, &training, TRAINING_HEADER)?;
    let kl: Vec<LensKlRow> = outcome
        .lenses
        .lenses
        .iter()
        .zip(&outcome.initial_kl)
        .map(|(l, &initial_kl)| LensKlRow { layer: l.layer, head: l.head, initial_kl, final_kl: l.final_kl })
        .collect();
    emit_csv(&mut m, dir, LENS_KL_CSV, &kl, LENS_KL_HEADER)?;
    m.note("sequences", seqs.len());
    m.note("training_seed", tcfg.seed);
    m.note("final_kl", "mean over the last 100 steps");
    m.write(dir)?;
    Ok(())
}

fn attribute_heads(seed: u64, args: &AttributeArgs) -> Result<()> {
    let mut m = Manifest::new("attribute-heads", seed, args);
    let loaded = open_model(&args.model, &mut m)?;
    let pairs = open_dataset(&args.dataset, &mut m)?;
    let lens_path = args.lenses.clone().unwrap_or_else(|| args.output.out.join(archive::LENS_FILE));
    let lenses = archive::load_lenses(&lens_path)?;
    m.input("lenses", &lens_path)?;
    let trajs = pipeline::attribute(&loaded.model, &loaded.model_id, &lenses, &pairs, args.cycles)?;
    let rows = head_contrast_rows(&trajs);
    let dir = &args.output.out;
    emit_csv(&mut m, dir, HEAD_CONTRAST_CSV, &rows, HEAD_CONTRAST_HEADER)?;
    let rankings: Vec<_> = Condition::ALL.iter().map(|&c| rank_heads(&trajs, c, args.top)).collect();
    emit_json(&mut m, dir, HEAD_RANKING_FILE, &rankings)?;
    let highlight = rankings
        .iter()
        .map(|r| (r.condition, r.top.iter().chain(&r.bottom).map(|&(l, h, _)| (l, h)).collect()))
        .collect();
    emit_svg(&mut m, &args.output, "head_contrast.svg", || plots::head_contrast_svg(&rows, &highlight))?;
    m.note("cycles", CYCLE_K_NOTE);
    m.note("contrast", "p[ctok] - p[ntok] under the softmax of the translated logits");
    m.write(dir)?;
    Ok(())
}

fn perturb(seed: u64, args: &PerturbArgs) -> Result<()> {
    let mut m = Manifest::new("perturb", seed, args);
    let loaded = open_model(&args.model, &mut m)?;
    let pairs = open_dataset(&args.dataset, &mut m)?;
    let cfg = PerturbationConfig {
        p_grid: args.p_grid.clone(),
        cycle_grid: args.cycles.clone(),
        seed: task_seed(seed, "perturb"),
        max_new: args.max_new,
        samples_per_prompt: args.samples,
        repeat_rule: args.repeat_rule.into(),
        ..PerturbationConfig::default()
    };
    let sweep = pipeline::perturb(&loaded.model, &loaded.model_id, &pairs, &cfg)?;
    let dir = &args.output.out;
    let rows = perturbation_rows(&sweep.aggregates);
    emit_csv(&mut m, dir, PERTURBATION_CSV, &rows, PERTURBATION_HEADER)?;
    emit_svg(&mut m, &args.output, "perturbation.svg", || plots::perturbation_svg(&rows))?;
    if args.records {
        let mut text = String::new();
        for r in &sweep.records {
            text.push_str(&serde_json::to_string(r).expect("plain record"));
            text.push('\n');
        }
        let path = dir.join(RECORDS_FILE);
        write_atomic(&path, text.as_bytes())?;
        m.output(RECORDS_FILE, &path)?;
    }
    m.note("sweep_seed", cfg.seed);
    m.note("skipped_context_overflow", sweep.skipped);
    m.note("repeat_rule", cfg.repeat_rule.as_str());
    m.note("rouge_reference", "greedy cycle unit; candidate is the detected unit, else the first 2n generated tokens");
    m.write(dir)?;
    Ok(())
}

fn run_report(seed: u64, args: &ReportArgs) -> Result<()> {
    let mut m = Manifest::new("report", seed, args);
    let path = report::write_report(&args.out)?;
    m.output("report", &path)?;
    m.write(&args.out)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::ToyModel(a) => toy_model(seed, a),
        Command::BuildDataset(a) => build_dataset(seed, a),
        Command::Verify(a) => verify(a),
        Command::AnalyzeProb(a) => analyze_prob(seed, a),
        Command::TrainLens(a) => train_lens(seed, a),
        Command::AttributeHeads(a) => attribute_heads(seed, a),
        Command::Perturb(a) => perturb(seed, a),
        Command::Report(a) => run_report(seed, a),
    }
}

/// Parse `std::env::args`, run, and return the process exit code: 0 on
/// success, 1 on runtime errors (JSON record on stderr), 2 on usage errors.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", Error::Input(format!("thread pool: {e}")).record());
            return 1;
        }
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            1
        }
    }
}
