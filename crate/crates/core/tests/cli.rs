//! End-to-end runs of the `hallu-pref` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use hallu_pref::jsonl::{read_feedback_dataset, read_preference_dataset, write_preference_dataset};
use hallu_pref::policy::ToyPolicy;
use hallu_pref::types::PreferenceDataset;
use num_rational::Ratio;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(common::bin_path()).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn rate_zero_generates_only_clean_responses() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["gen", "--n", "10", "--rate", "0", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ds = read_feedback_dataset(&tmp.path().join("c/ground_truth.jsonl")).unwrap();
    assert_eq!(ds.len(), 10);
    assert!(ds.records().iter().all(|r| r.annotated.is_all_clean()));
    for f in ["responses.jsonl", "eval_records.jsonl", "lexicon.json", "world.json", "run_manifest.json"] {
        assert!(tmp.path().join("c").join(f).exists(), "{f}");
    }
}

#[test]
fn out_of_range_rate_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["gen", "--n", "10", "--rate", "1.5", "--out", "c"]);
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn unknown_metric_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(tmp.path(), &["eval", "--metrics", "chair,bleu"])), 2);
}

#[test]
fn empty_input_fails_build() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("empty.jsonl"), "").unwrap();
    let o = run(tmp.path(), &["build-prefs", "--in", "empty.jsonl", "--out", "p/prefs.jsonl"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_steps_leaves_the_initial_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["gen", "--n", "40", "--rate", "0.5", "--out", "c"])), 0);
    assert_eq!(code(&run(d, &["build-prefs", "--in", "c/responses.jsonl", "--out", "p.jsonl"])), 0);
    let o = run(d, &["train", "--prefs", "p.jsonl", "--steps", "0", "--buckets", "4", "--ckpt-out", "m.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = ToyPolicy::load(&d.join("m.json")).unwrap();
    let uniform = ToyPolicy::uniform(p.vocab().clone(), 4).unwrap();
    assert_eq!(p.logits().as_slice(), uniform.logits().as_slice());
}

#[test]
fn unit_severity_traces_match_between_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["gen", "--n", "200", "--rate", "0.3", "--seed", "4", "--out", "c"])), 0);
    assert_eq!(code(&run(d, &["build-prefs", "--in", "c/responses.jsonl", "--out", "all.jsonl"])), 0);
    let all = read_preference_dataset(&d.join("all.jsonl")).unwrap();
    let mut unit = PreferenceDataset::new(all.meta.clone());
    for p in all.pairs().iter().filter(|p| p.aggregated_severity.ratio() == Ratio::from_integer(1)) {
        unit.push(p.clone()).unwrap();
    }
    assert!(unit.len() >= 5, "only {} unit-severity pairs", unit.len());
    write_preference_dataset(&d.join("unit.jsonl"), &unit).unwrap();
    for loss in ["dpo", "hsa-dpo"] {
        let o = run(
            d,
            &[
                "train", "--prefs", "unit.jsonl", "--loss", loss, "--steps", "25", "--batch-size", "4",
                "--ckpt-out", &format!("{loss}/m.json"), "--trace-out", &format!("{loss}/trace.csv"),
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace.csv", "m.json"] {
        assert_eq!(
            std::fs::read(d.join("dpo").join(f)).unwrap(),
            std::fs::read(d.join("hsa-dpo").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn eval_reports_every_requested_group() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["gen", "--n", "60", "--rate", "0.4", "--out", "c"])), 0);
    assert_eq!(code(&run(d, &["annotate", "--in", "c/responses.jsonl", "--out", "a/pred.jsonl"])), 0);
    let o = run(
        d,
        &[
            "eval", "--records", "c/eval_records.jsonl", "--lexicon", "c/lexicon.json", "--metrics",
            "chair,amber,detect,severity", "--predicted", "a/pred.jsonl", "--gold", "c/ground_truth.jsonl",
            "--report-out", "r/report.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r/report.json")).unwrap()).unwrap();
    let text = report.to_string();
    for name in ["CHAIR_S", "CHAIR_I", "Cover", "Hal", "Cog", "Macro-F1_4way", "HS"] {
        assert!(text.contains(&format!("\"{name}\"")), "{name} missing");
    }
    assert!(d.join("r/run_manifest.json").exists());
}
