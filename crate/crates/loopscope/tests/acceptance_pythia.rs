//! Small-model reproduction checks on Pythia-70m. Needs the checkpoint
//! directory (model.safetensors, config.json, tokenizer.json) in
//! `LOOPSCOPE_PYTHIA70M_DIR` and a line-per-sentence corpus of at least
//! 1000 lines in `LOOPSCOPE_CORPUS`; lines after the first 1000 train the
//! head lenses. Without them every criterion is reported as blocked and the
//! target fails.

use std::path::PathBuf;
use std::time::Instant;

use loopscope::archive::load_model;
use loopscope::dataset_io::{build_dataset, read_corpus, BuildOptions};
use loopscope::pipeline::{self, task_seed};
use loopscope::tables::{perturbation_rows, prob_entropy_rows, PerturbationRow, ProbEntropyRow};
use loopscope::tokenizer::Tokenizer;
use loopscope_core::dataset::{continues_cycle, Condition};
use loopscope_core::lens::LensTrainingConfig;
use loopscope_core::perturb::PerturbationConfig;
use loopscope_core::TokenId;

const CRITERIA: [&str; 4] = [
    "8 repetition rate on Pythia-70m",
    "9 probability/entropy trend on Pythia-70m",
    "10 top-p perturbation direction on Pythia-70m",
    "10b head contrast structure on Pythia-70m",
];
const PAIRS: usize = 1000;
const LENS_SAMPLES: usize = 10_000;
const HEAD_THRESHOLD: f64 = -0.05;

fn line(pass: bool, name: &str, detail: &str) -> bool {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn prob(rows: &[ProbEntropyRow], c: Condition, cycle: usize) -> Option<&ProbEntropyRow> {
    rows.iter().find(|r| r.condition == c && r.cycle_index == cycle)
}

fn pert(rows: &[PerturbationRow], c: Condition, cycles: usize, p: f64) -> Option<&PerturbationRow> {
    rows.iter().find(|r| r.condition == c && r.cycles_in_prompt == cycles && (r.p - p).abs() < 1e-12)
}

fn main() {
    let (Some(dir), Some(corpus)) = (std::env::var_os("LOOPSCOPE_PYTHIA70M_DIR"), std::env::var_os("LOOPSCOPE_CORPUS"))
    else {
        for name in CRITERIA {
            line(false, name, "BLOCKED: set LOOPSCOPE_PYTHIA70M_DIR and LOOPSCOPE_CORPUS");
        }
        std::process::exit(1);
    };
    let (dir, corpus) = (PathBuf::from(dir), PathBuf::from(corpus));
    let loaded = load_model(&dir).expect("Pythia-70m checkpoint");
    let model = &loaded.model;
    let tok = Tokenizer::from_dir(&dir).expect("tokenizer");
    assert!(!tok.is_bytes(), "no tokenizer files in {}", dir.display());
    let lines = read_corpus(&corpus, None).expect("corpus");
    assert!(lines.len() >= PAIRS, "corpus has {} lines, need {PAIRS}", lines.len());
    let mut ok = true;
    let start = Instant::now();

    // 8
    let (pairs, report) =
        build_dataset(model, &tok, &loaded.model_id, &lines[..PAIRS], &BuildOptions::default()).expect("build");
    let icl_ok =
        pairs.iter().filter(|p| continues_cycle(model, &p.icl_prompt.ids, p.unit()).expect("generation")).count();
    let icl_rate = icl_ok as f64 / pairs.len().max(1) as f64;
    let raw = report.raw_repetition.rate;
    ok &= line(
        (0.95..=1.0).contains(&raw) && icl_rate >= 0.99,
        CRITERIA[0],
        &format!(
            "raw {:.2} % (95-100 %); ICL re-verified {:.2} % (>= 99 %); {} pairs",
            raw * 100.0,
            icl_rate * 100.0,
            pairs.len()
        ),
    );

    // 9
    let (_, agg) = pipeline::analyze_prob(model, &loaded.model_id, &pairs, 7).expect("analysis");
    let rows = prob_entropy_rows(&agg);
    let mut rising = true;
    let mut entropy_falls = true;
    for c in Condition::ALL {
        let means: Vec<Option<f64>> = (1..=5).map(|k| prob(&rows, c, k).map(|r| r.mean_prob)).collect();
        rising &= means.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a));
        entropy_falls &= matches!(
            (prob(&rows, c, 1), prob(&rows, c, 5)),
            (Some(a), Some(b)) if b.mean_entropy < a.mean_entropy
        );
    }
    let icl_below = matches!(
        (prob(&rows, Condition::Icl, 1), prob(&rows, Condition::Natural, 1)),
        (Some(i), Some(n)) if i.mean_prob < n.mean_prob
    );
    ok &= line(
        rising && icl_below && entropy_falls,
        CRITERIA[1],
        &format!("probability rises over cycles 1-5: {rising}; ICL cycle-1 below natural: {icl_below}; entropy cycle 5 < cycle 1: {entropy_falls}"),
    );

    // 10
    let cfg = PerturbationConfig {
        p_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        cycle_grid: vec![0, 2, 4],
        seed: task_seed(0, "perturb"),
        ..PerturbationConfig::default()
    };
    let sweep = pipeline::perturb(model, &loaded.model_id, &pairs, &cfg).expect("sweep");
    let rows = perturbation_rows(&sweep.aggregates);
    let icl_higher = [2, 4].iter().all(|&c| {
        matches!(
            (pert(&rows, Condition::Icl, c, 0.8), pert(&rows, Condition::Natural, c, 0.8)),
            (Some(i), Some(n)) if i.mean_rouge_l > n.mean_rouge_l
        )
    });
    let persistent = Condition::ALL.iter().all(|&c| {
        [0.0, 0.2, 0.4].iter().all(|&p| pert(&rows, c, 0, p).is_some_and(|r| r.proportion_repetitive >= 0.9))
    });
    ok &= line(
        icl_higher && persistent,
        CRITERIA[2],
        &format!(
            "ICL ROUGE-L above natural at p=0.8, c in {{2,4}}: {icl_higher}; repetitive >= 0.9 at p <= 0.4, c=0: {persistent}; {:.0} s so far",
            start.elapsed().as_secs_f64()
        ),
    );

    // 10b
    let seqs: Vec<Vec<TokenId>> = lines[PAIRS..]
        .iter()
        .filter_map(|l| tok.encode(l).ok())
        .map(|mut ids| {
            ids.truncate(128);
            ids
        })
        .filter(|ids| !ids.is_empty())
        .take(LENS_SAMPLES)
        .collect();
    let tcfg = LensTrainingConfig { seed: task_seed(0, "train-lens"), ..Default::default() };
    let trained = pipeline::train_lenses(model, &seqs, &tcfg).expect("lens training");
    let trajs = pipeline::attribute(model, &loaded.model_id, &trained.lenses, &pairs, 7).expect("attribution");
    let icl_negative_growing = trajs.iter().filter(|t| t.condition == Condition::Icl).any(|t| {
        t.overall() < HEAD_THRESHOLD
            && t.count.get(1).is_some_and(|&n| n > 0)
            && t.mean.get(5).is_some_and(|&m5| m5 < t.mean[1])
    });
    let natural_min =
        trajs.iter().filter(|t| t.condition == Condition::Natural).map(|t| t.overall()).fold(f64::INFINITY, f64::min);
    ok &= line(
        icl_negative_growing && natural_min >= HEAD_THRESHOLD,
        CRITERIA[3],
        &format!(
            "ICL head below {HEAD_THRESHOLD} and falling over cycles: {icl_negative_growing}; most negative natural head {natural_min:.4} (>= {HEAD_THRESHOLD}); {} lens sequences",
            seqs.len()
        ),
    );
    println!("total {:.0} s", start.elapsed().as_secs_f64());
    if !ok {
        std::process::exit(1);
    }
}
