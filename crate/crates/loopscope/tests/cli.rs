mod common;

use std::path::Path;
use std::process::{Command, Output};

use loopscope::tables::*;

fn loopscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopscope")).args(args).env_remove("LOOPSCOPE_MODEL_DIR").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy model and a dataset from the first 30 corpus lines.
fn setup(dir: &Path) {
    ok(&loopscope(&["toy-model", "--seed", "3", "--out", s(&dir.join("model"))]));
    let corpus = common::fixture("corpus.txt");
    ok(&loopscope(&[
        "build-dataset",
        "--corpus",
        s(&corpus),
        "--model",
        s(&dir.join("model")),
        "--lines",
        "30",
        "--out",
        s(&dir.join("data.jsonl")),
    ]));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = loopscope(&["verify", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_model_is_reported_with_its_path() {
    let out = loopscope(&["verify", "--dataset", "/no/such.jsonl", "--model", "/no/such/model"]);
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"], "io");
    assert_eq!(record["path"], "/no/such/model");
}

#[test]
fn model_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_loopscope"))
        .args(["verify", "--dataset", s(&dir.path().join("data.jsonl"))])
        .env("LOOPSCOPE_MODEL_DIR", dir.path().join("model"))
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn build_verify_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    for f in ["data.jsonl", "build_report.json", CYCLE_HISTOGRAM_CSV, "manifest.build-dataset.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let model = d.join("model");
    let data = d.join("data.jsonl");
    let out = loopscope(&["verify", "--dataset", s(&data), "--model", s(&model)]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("pairs verified"));

    let res = d.join("res");
    ok(&loopscope(&["analyze-prob", "--dataset", s(&data), "--model", s(&model), "--out", s(&res)]));
    let csv = std::fs::read_to_string(res.join(PROB_ENTROPY_CSV)).unwrap();
    assert_eq!(csv.lines().next().unwrap(), PROB_ENTROPY_HEADER.join(","));
    assert!(res.join("prob_entropy.svg").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(res.join("manifest.analyze-prob.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "analyze-prob");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);

    let out = loopscope(&["report", "--out", s(&res)]);
    ok(&out);
    let html = std::fs::read_to_string(res.join("report.html")).unwrap();
    assert_eq!(html.matches("<h2>").count(), 1);
}

#[test]
fn verify_fails_on_a_tampered_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let data = d.join("data.jsonl");
    let text = std::fs::read_to_string(&data).unwrap();
    let mut pair: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    pair["icl_prompt"]["ids"].as_array_mut().unwrap().push(serde_json::json!(65));
    std::fs::write(&data, format!("{pair}\n")).unwrap();
    let out = loopscope(&["verify", "--dataset", s(&data), "--model", s(&d.join("model"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"reason\""));
}

#[test]
fn no_svg_writes_tables_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let res = d.join("res");
    ok(&loopscope(&[
        "perturb",
        "--dataset",
        s(&d.join("data.jsonl")),
        "--model",
        s(&d.join("model")),
        "--out",
        s(&res),
        "--p-grid",
        "0,1",
        "--cycles",
        "0",
        "--max-new",
        "30",
        "--no-svg",
    ]));
    let csv = std::fs::read_to_string(res.join(PERTURBATION_CSV)).unwrap();
    assert_eq!(csv.lines().next().unwrap(), PERTURBATION_HEADER.join(","));
    assert!(!res.join("perturbation.svg").exists());
}

#[test]
fn out_of_range_p_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let out = loopscope(&[
        "perturb",
        "--dataset",
        s(&d.join("data.jsonl")),
        "--model",
        s(&d.join("model")),
        "--out",
        s(&d.join("res")),
        "--p-grid",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside [0, 1]"));
}

#[test]
fn report_without_outputs_lists_what_it_needs() {
    let dir = tempfile::tempdir().unwrap();
    let out = loopscope(&["report", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(PROB_ENTROPY_CSV) && err.contains(PERTURBATION_CSV), "{err}");
}
