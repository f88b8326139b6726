use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
repeats = 2
pair_count = 2000
[data]
kind = "synthetic"
n = 90
[embedding]
kind = "hashed-bow"
dim = 64
[predictor]
hidden = 16
epochs = 40
[gcn]
hidden = 16
epochs = 60
"#;

fn graphedit(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.toml");
    if !config.exists() {
        fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_graphedit"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = graphedit(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn staged_commands_chain_through_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.join("out");
    let stats = ok(d, &["synth"]);
    assert!(stats.contains("\"nodes\": 90"), "{stats}");
    let graph = out.join("graph");
    let g = graph.to_str().unwrap();

    assert!(ok(d, &["split", "--graph", g]).starts_with("train 54, valid 18, test 18"));
    assert!(ok(d, &["sample-pairs", "--graph", g, "--m", "500"]).starts_with("500 pairs"));
    ok(d, &["export-instructions", "--graph", g]);
    let lines = fs::read_to_string(out.join("instructions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 500);

    ok(d, &["embed", "--graph", g]);
    ok(d, &["train-edge-predictor"]);
    assert!(ok(d, &["--k", "2", "candidates"]).contains("(k = 2)"));
    let report = ok(d, &["--k", "2", "refine", "--graph", g]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["inter_edges_after"], 0);
    assert!(out.join("refined/refined_edges.tsv").exists());
    assert!(out.join("verdicts.jsonl").exists());

    let refined = out.join("refined");
    let r = refined.to_str().unwrap();
    assert!(ok(d, &["train-gcn", "--graph", g, "--refined", r]).starts_with("best valid"));
    assert!(ok(d, &["train-mlp", "--graph", g]).starts_with("best valid"));
    let curve = fs::read_to_string(out.join("gcn_loss.csv")).unwrap();
    assert!(curve.starts_with("epoch,loss\n"));

    let dot = ok(d, &["to-dot", "--graph", g, "--nodes", "0,1,2,3,4,5", "--refined", r]);
    assert!(dot.starts_with("graph") && dot.trim_end().ends_with('}'), "{dot}");
    let bad = graphedit(d, &["to-dot", "--graph", g, "--nodes", "999"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("999"));
}

#[test]
fn run_all_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = ok(d, &["--k", "2", "--repeats", "3", "run-all"]);
    assert!(table.contains('±'), "{table}");
    let result = d.join("out/result.json");
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(parsed["k"], 2);
    assert_eq!(parsed["summary"]["accuracies"].as_array().unwrap().len(), 3);
    assert!(d.join("out/timings.json").exists());
    assert!(d.join("out/config.toml").exists());

    let again = ok(d, &["report", result.to_str().unwrap()]);
    assert!(again.contains('±'));
    let json = ok(d, &["report", "--json", result.to_str().unwrap()]);
    assert!(json.trim_start().starts_with('['));

    let missing = graphedit(d, &["report", "/nonexistent/result.json"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/result.json"));
}

#[test]
fn single_value_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(dir.path(), &["sweep-k", "--values", "3"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,mean,std,unrefined_mean,unrefined_std");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("3,"));
    assert!(dir.path().join("out/sweep_k.csv").exists());
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), "repeats = 0\n").unwrap();
    let out = graphedit(dir.path(), &["run-all"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    fs::write(dir.path().join("config.toml"), "unknown_key = 1\n").unwrap();
    let out = graphedit(dir.path(), &["run-all"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));

    let dir = tempfile::tempdir().unwrap();
    let out = graphedit(dir.path(), &["--mode", "sideways", "run-all"]);
    assert!(!out.status.success());
}
