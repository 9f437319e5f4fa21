//! Pinned outputs: a fixed manifest must keep producing the same logits.

use std::fs;

use centaur::ring::RealTensor;
use centaur::run::{cmd_infer, RunManifest, RunMode};

fn fixture() -> RunManifest {
    RunManifest::load("tests/fixtures/centaur.toml").unwrap()
}

#[test]
fn centaur_logits_match_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = fixture();
    m.outputs.logits = dir.path().join("logits.json");
    cmd_infer(&m).unwrap();
    let got = fs::read_to_string(&m.outputs.logits).unwrap();
    let want = fs::read_to_string("tests/fixtures/golden_logits.json").unwrap();
    assert_eq!(got, want);
}

#[test]
fn golden_logits_agree_with_the_plaintext_model() {
    let mut m = fixture();
    m.mode = RunMode::Plain;
    let plain = centaur::run::infer(&m).unwrap().logits;
    let golden: RealTensor =
        serde_json::from_str(&fs::read_to_string("tests/fixtures/golden_logits.json").unwrap()).unwrap();
    assert!(golden.max_abs_diff(&plain).unwrap() <= 1e-2);
}

#[test]
fn fixture_manifest_round_trips() {
    let m = fixture();
    let text = m.to_toml().unwrap();
    let again: RunManifest = toml::from_str(&text).unwrap();
    assert_eq!(again, m);
    assert_eq!(again.to_toml().unwrap(), text);
}
