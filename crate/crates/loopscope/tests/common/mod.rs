#![allow(dead_code)]

use std::path::{Path, PathBuf};

use loopscope::dataset_io::{build_dataset, read_corpus, BuildOptions, BuildReport};
use loopscope::tokenizer::Tokenizer;
use loopscope_core::dataset::PromptPair;
use loopscope_core::model::build_toy_model;
use loopscope_core::Model;

pub const TOY_SEED: u64 = 3;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn corpus_lines(n: usize) -> Vec<String> {
    read_corpus(&fixture("corpus.txt"), Some(n)).unwrap()
}

/// Toy model and the pairs built from the first `n` corpus lines.
pub fn toy_dataset(n: usize) -> (Model, Vec<PromptPair>, BuildReport) {
    let model = build_toy_model(TOY_SEED);
    let (pairs, report) =
        build_dataset(&model, &Tokenizer::Bytes, "toy", &corpus_lines(n), &BuildOptions::default()).unwrap();
    (model, pairs, report)
}
