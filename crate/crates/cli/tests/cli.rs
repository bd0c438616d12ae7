use std::path::Path;
use std::process::{Command, Output};

fn multifuse(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_multifuse")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn synth_writes_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    multifuse(&["synth", "--n", "10", "--out", out.to_str().unwrap()]);
    let labels = std::fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 11);
    assert_eq!(std::fs::read_to_string(out.join("tokens.jsonl")).unwrap().lines().count(), 10);
    assert_eq!(std::fs::read_dir(out.join("features")).unwrap().count(), 10);
    assert!(out.join("vocab.json").exists());
}

#[test]
fn parse_chat_emits_one_record_per_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/chat");
    let out = dir.path().join("tokens.jsonl");
    multifuse(&[
        "parse-chat",
        "--input",
        fixtures.to_str().unwrap(),
        "--max-len",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].is_string() && v["ids"][0] == 2, "{line}");
    }
    assert_eq!(text.lines().count(), 5);
    assert!(dir.path().join("vocab.json").exists());
}

#[test]
fn gradcheck_reports_each_case() {
    let out = multifuse(&["gradcheck", "--case", "add,relu", "--seeds", "3"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 2, "{stdout}");
}

#[test]
fn unknown_case_fails() {
    let out = Command::new(env!("CARGO_BIN_EXE_multifuse"))
        .args(["gradcheck", "--case", "nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
