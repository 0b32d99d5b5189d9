mod common;

use std::path::Path;

use common::{bin, run, stderr, stdout, write_fixture, GOLD};

fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

#[test]
fn help_exits_zero() {
    let o = run(bin().arg("--help"));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("experiment"));
}

#[test]
fn evaluate_gold_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", GOLD);
    let o = run(bin().args(["evaluate", "--gold"]).arg(&gold).arg("--pred").arg(&gold));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("| micro | 1.00 | 1.00 | 1.00 |"), "{}", stdout(&o));
}

#[test]
fn strict_scheme_rejects_boundary_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(
        dir.path(),
        "gold.jsonl",
        r#"{"text":"Goethe in Weimar","spans":[{"start":0,"end":6,"label":"PER"}],"meta":{"id":"a"}}"#,
    );
    let pred = write(
        dir.path(),
        "pred.jsonl",
        r#"{"text":"Goethe in Weimar","spans":[{"start":0,"end":5,"label":"PER"}],"meta":{"id":"a"}}"#,
    );
    let f1 = |scheme: &str| {
        let o = run(bin()
            .args(["evaluate", "--format", "json", "--scheme", scheme, "--gold"])
            .arg(&gold)
            .arg("--pred")
            .arg(&pred));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["micro"]["f1"].as_f64().unwrap()
    };
    assert_eq!(f1("strict"), 0.0);
    assert_eq!(f1("ent_type"), 1.0);
    assert_eq!(f1("partial"), 0.5);
}

#[test]
fn evaluate_reports_mismatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", GOLD);
    let pred = write(
        dir.path(),
        "pred.jsonl",
        r#"{"text":"Goethe wohnte lange in Weimar.","spans":[],"meta":{"id":"p1"}}
{"text":"x","spans":[],"meta":{"id":"p9"}}"#,
    );
    let o = run(bin().args(["evaluate", "--gold"]).arg(&gold).arg("--pred").arg(&pred));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("p2, p3") && err.contains("p9"), "{err}");
}

#[test]
fn unknown_scheme_is_an_input_error() {
    let o = run(bin().args(["evaluate", "--gold", "g", "--pred", "p", "--scheme", "fuzzy"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn experiment_replays_recorded_cache_into_new_directory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    common::record_perfect_cache(&spec);
    let out = dir.path().join("a/b/out");
    let o = run(bin().arg("experiment").arg("--spec").arg(&spec).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("| Full Prompt | de |"));
    for f in ["report.md", "report.csv", "report.json", "transcripts.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn experiment_cache_miss_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let o = run(bin().arg("experiment").arg("--spec").arg(&spec).arg("--out").arg(dir.path().join("out")));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let err = stderr(&o);
    let key = err.split_whitespace().find(|w| w.len() >= 64 && w.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(key.is_some(), "{err}");
}

#[test]
fn annotate_replays_cache_and_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    common::record_perfect_cache(&spec);
    let pred = dir.path().join("pred.jsonl");
    let o = run(bin()
        .args(["annotate", "--mode", "replay_strict", "--model", "fixture-model", "--corpus"])
        .arg(dir.path().join("gold.jsonl"))
        .arg("--prompt-config")
        .arg(dir.path().join("row.toml"))
        .arg("--cache-dir")
        .arg(dir.path().join("cache"))
        .arg("--out")
        .arg(&pred));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let loaded = histner::corpus::load_gold(&pred).unwrap();
    assert_eq!(loaded.documents.len(), 3);

    let o = run(bin().arg("evaluate").arg("--gold").arg(dir.path().join("gold.jsonl")).arg("--pred").arg(&pred));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("| micro | 1.00 | 1.00 | 1.00 |"), "{}", stdout(&o));
}

#[test]
fn live_annotation_without_key_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = run(bin()
        .args(["annotate", "--mode", "live", "--model", "m", "--corpus"])
        .arg(dir.path().join("gold.jsonl"))
        .arg("--prompt-config")
        .arg(dir.path().join("row.toml"))
        .arg("--out")
        .arg(dir.path().join("pred.jsonl")));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("LLM_API_KEY"));
}

#[test]
fn missing_corpus_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = run(bin()
        .args(["annotate", "--model", "m", "--corpus", "does-not-exist.jsonl"])
        .arg("--prompt-config")
        .arg(dir.path().join("row.toml"))
        .arg("--out")
        .arg(dir.path().join("pred.jsonl")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does-not-exist.jsonl"));
}
