//! The `centaur` binary end to end: files, reports and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use centaur::model::weights::{self, WeightFiles};
use centaur::ring::RealTensor;
use serde_json::Value;

fn centaur(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_centaur"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = centaur(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn logits(path: impl AsRef<Path>) -> RealTensor {
    serde_json::from_value(json(path)).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tokens.txt"), "11, 4, 36, 2, 19").unwrap();
    dir
}

#[test]
fn genmodel_is_deterministic() {
    let dir = workspace();
    let d = dir.path();
    ok(&["genmodel", "--seed", "5", "--out", "a"], d);
    ok(&["genmodel", "--seed", "5", "--out", "b"], d);
    ok(&["genmodel", "--seed", "6", "--out", "c"], d);
    assert_eq!(fs::read(d.join("a.bin")).unwrap(), fs::read(d.join("b.bin")).unwrap());
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    assert_ne!(fs::read(d.join("a.bin")).unwrap(), fs::read(d.join("c.bin")).unwrap());
    let params = weights::load(&WeightFiles::from_prefix(d.join("a"))).unwrap();
    assert_eq!(params.config, centaur::ModelConfig::toy_encoder());
    assert_eq!(params.token_embedding.shape(), [50, 16]);
}

#[test]
fn plain_runs_are_byte_identical() {
    let dir = workspace();
    let d = dir.path();
    for out in ["p1.json", "p2.json"] {
        ok(
            &["infer", "--mode", "plain", "--tokens", "tokens.txt", "--logits", out],
            d,
        );
    }
    assert_eq!(
        fs::read(d.join("p1.json")).unwrap(),
        fs::read(d.join("p2.json")).unwrap()
    );
}

#[test]
fn secure_modes_match_plain_and_centaur_is_cheaper() {
    let dir = workspace();
    let d = dir.path();
    ok(&["genmodel", "--seed", "3", "--out", "w"], d);
    let run = |mode: &str| {
        ok(
            &[
                "infer",
                "--mode",
                mode,
                "--weights",
                "w",
                "--tokens",
                "tokens.txt",
                "--logits",
                &format!("{mode}.json"),
                "--report",
                &format!("{mode}-report.json"),
                "--transcript",
                &format!("{mode}-transcript.json"),
                "--net",
                "wan",
                "--debug-perm-ledger",
            ],
            d,
        );
    };
    for mode in ["plain", "centaur", "baseline"] {
        run(mode);
    }
    let plain = logits(d.join("plain.json"));
    for mode in ["centaur", "baseline"] {
        assert!(logits(d.join(format!("{mode}.json"))).max_abs_diff(&plain).unwrap() <= 1e-2);
        let report = json(d.join(format!("{mode}-report.json")));
        assert!(report["audit"].is_null(), "{mode}: {}", report["audit"]);
        assert!(
            json(d.join(format!("{mode}-transcript.json")))["messages"]
                .as_array()
                .unwrap()
                .len()
                > 10
        );
    }
    let secs = |mode: &str| {
        json(d.join(format!("{mode}-report.json")))["cost"]["online"]["seconds"]
            .as_f64()
            .unwrap()
    };
    assert!(secs("centaur") < secs("baseline"));
    let kinds = json(d.join("centaur-report.json"))["cost"]["by_kind"]
        .as_array()
        .unwrap()
        .len();
    assert!(kinds >= 6);
}

#[test]
fn saved_manifest_replays_exactly() {
    let dir = workspace();
    let d = dir.path();
    ok(
        &[
            "infer",
            "--mode",
            "centaur",
            "--tokens",
            "tokens.txt",
            "--logits",
            "a.json",
            "--report",
            "a-report.json",
            "--seed-perms",
            "77",
            "--net",
            "custom:500:5",
            "--save-manifest",
            "run.toml",
        ],
        d,
    );
    ok(
        &[
            "infer",
            "--manifest",
            "run.toml",
            "--logits",
            "b.json",
            "--report",
            "b-report.json",
            "--threads",
        ],
        d,
    );
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    assert_eq!(
        fs::read(d.join("a-report.json")).unwrap(),
        fs::read(d.join("b-report.json")).unwrap()
    );
    let manifest = fs::read_to_string(d.join("run.toml")).unwrap();
    assert!(manifest.contains("perms = 77") && manifest.contains("custom:500:5"));
}

#[test]
fn socket_transport_runs_from_the_command_line() {
    let dir = workspace();
    let d = dir.path();
    ok(&["infer", "--tokens", "tokens.txt", "--logits", "lock.json"], d);
    ok(
        &["infer", "--tokens", "tokens.txt", "--logits", "sock.json", "--sockets"],
        d,
    );
    assert_eq!(
        fs::read(d.join("lock.json")).unwrap(),
        fs::read(d.join("sock.json")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = workspace();
    let d = dir.path();
    let cases: [&[&str]; 5] = [
        &["infer", "--tokens", "tokens.txt", "--logits", "x.json", "--net", "dsl"],
        &["infer", "--tokens", "missing.txt", "--logits", "x.json"],
        &[
            "infer",
            "--tokens",
            "tokens.txt",
            "--logits",
            "x.json",
            "--config",
            "nope.toml",
        ],
        &["infer", "--logits", "x.json"],
        &["analyze", "shuffle", "--fractions", "1.5"],
    ];
    for args in cases {
        let out = centaur(args, d);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    fs::write(d.join("bad.txt"), "1 2 400").unwrap();
    let out = centaur(&["infer", "--tokens", "bad.txt", "--logits", "x.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(!centaur::Error::TokenOutOfRange { id: 400, vocab: 50 }.is_protocol());
    assert!(centaur::Error::TripleExhausted((1, 1, 1)).is_protocol());
}

#[test]
fn analyze_subcommands_emit_reports() {
    let dir = workspace();
    let d = dir.path();
    ok(
        &[
            "analyze",
            "discorr",
            "--trials",
            "10",
            "--samples",
            "32",
            "--report",
            "dc.json",
        ],
        d,
    );
    let dc = json(d.join("dc.json"));
    assert_eq!(dc["permuted"].as_array().unwrap().len(), 10);
    assert!(dc["mean_permuted"].as_f64().unwrap() <= 1.0);

    let js: Value = serde_json::from_str(&ok(&["analyze", "js", "--inputs", "16"], d)).unwrap();
    let mean = js["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean) && js["pairs"] == 120);

    let crack: Value = serde_json::from_str(&ok(
        &[
            "analyze",
            "crack",
            "--d",
            "5",
            "--scorer",
            "hamming",
            "--generations",
            "100",
        ],
        d,
    ))
    .unwrap();
    assert_eq!(crack["fraction_correct"], 1.0);
    assert_eq!(crack["trace"].as_array().unwrap().len(), 101);

    let shuffle: Value = serde_json::from_str(&ok(&["analyze", "shuffle", "--fractions", "0,0.5,1"], d)).unwrap();
    let rows = shuffle.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["accuracy"], 1.0);
    assert_eq!(rows[1]["shuffled"], 8);
    assert_eq!(rows[2]["shuffled"], 16);
}
