//! Byte-pair encoding against ids produced by the `tokenizers` library.

use std::path::{Path, PathBuf};

use loopscope::tokenizer::{truncate_chars, Tokenizer};
use loopscope::Error;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    text: String,
    ids: Vec<u32>,
}

fn bpe_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bpe")
}

fn cases() -> Vec<Case> {
    serde_json::from_str(&std::fs::read_to_string(bpe_dir().join("reference.json")).unwrap()).unwrap()
}

#[test]
fn tokenizer_json_matches_reference_ids() {
    let tok = Tokenizer::from_dir(&bpe_dir()).unwrap();
    assert!(!tok.is_bytes());
    for case in cases() {
        assert_eq!(tok.encode(&case.text).unwrap(), case.ids, "{:?}", case.text);
    }
}

#[test]
fn vocab_and_merges_match_reference_ids() {
    let dir = bpe_dir();
    let tok = Tokenizer::from_vocab_merges(&dir.join("vocab.json"), &dir.join("merges.txt")).unwrap();
    // added tokens only exist in tokenizer.json
    for case in cases().into_iter().filter(|c| !c.text.contains("<|endoftext|>")) {
        assert_eq!(tok.encode(&case.text).unwrap(), case.ids, "{:?}", case.text);
    }
}

#[test]
fn decode_inverts_encode() {
    let tok = Tokenizer::from_dir(&bpe_dir()).unwrap();
    for case in cases() {
        assert_eq!(tok.decode(&case.ids).unwrap(), case.text);
    }
}

#[test]
fn directory_without_tokenizer_files_is_byte_mode() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Tokenizer::from_dir(dir.path()).unwrap().is_bytes());
}

#[test]
fn malformed_merge_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(bpe_dir().join("vocab.json"), dir.path().join("vocab.json")).unwrap();
    std::fs::write(dir.path().join("merges.txt"), "#version: 0.2\nĠ t\nbroken\n").unwrap();
    let err = Tokenizer::from_dir(dir.path()).unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn unknown_ids_do_not_decode() {
    let tok = Tokenizer::from_dir(&bpe_dir()).unwrap();
    assert!(tok.decode(&[1_000_000]).is_err());
}

#[test]
fn truncation_counts_characters() {
    assert_eq!(truncate_chars("naïve café", 5), "naïve");
    assert_eq!(truncate_chars("東京タワー", 2), "東京");
    assert_eq!(truncate_chars("short", 50), "short");
}

proptest! {
    #[test]
    fn byte_mode_round_trips(text in "\\PC{0,64}") {
        let tok = Tokenizer::Bytes;
        let ids = tok.encode(&text).unwrap();
        prop_assert_eq!(ids.len(), text.len());
        prop_assert_eq!(tok.decode(&ids).unwrap(), text);
    }

    #[test]
    fn bpe_round_trips(text in "[a-zA-Z0-9 ,.'!?\\n\\téü東]{0,80}") {
        let tok = Tokenizer::from_dir(&bpe_dir()).unwrap();
        let ids = tok.encode(&text).unwrap();
        prop_assert_eq!(tok.decode(&ids).unwrap(), text);
    }
}
