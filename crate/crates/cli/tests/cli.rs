use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dpmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmi")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dpmi(args);
    assert!(out.status.success(), "dpmi {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const SAMPLE: &str = "id\tfeature\tpartition\tobservation\n\
User 1\tFeature 1\tPartition 1\t200.0\n\
User 2\tFeature 1\tPartition 2\t100.0\n\
User 3\tFeature 2\tPartition 3\t50.0\n\
User 3\tFeature 3\tPartition 3\t270.0\n";

#[test]
fn aggregate_sample_without_dp() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sample.tsv");
    std::fs::write(&input, SAMPLE).unwrap();
    let out = dir.path().join("table.tsv");
    ok(&["aggregate", "--input", s(&input), "--no-dp", "--output", s(&out)]);
    let table = std::fs::read_to_string(&out).unwrap();
    for line in [
        "joint\tFeature 1\tPartition 1\t200",
        "joint\tFeature 1\tPartition 2\t100",
        "joint\tFeature 2\tPartition 3\t50",
        "joint\tFeature 3\tPartition 3\t270",
        "feature\tFeature 1\t\t300",
        "partition\t\tPartition 3\t320",
        "total\t\t\t620",
        "epsilon_spent\t\t\t0",
    ] {
        assert!(table.lines().any(|l| l == line), "missing {line:?} in\n{table}");
    }
    let events = manifest(&dir.path().join("table.tsv.manifest.jsonl"));
    assert!(events.iter().any(|e| e["event"] == "input" && e["rows_read"] == 4));
}

#[test]
fn single_user_dimension_is_censored() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    let mut text = String::from("id,feature,partition,observation\n");
    for i in 0..400 {
        text.push_str(&format!("u{i},common,p{},1\n", i % 2));
    }
    text.push_str("loner,rare,p0,1\n");
    std::fs::write(&input, text).unwrap();
    let out = dir.path().join("table.tsv");
    ok(&[
        "aggregate", "--input", s(&input), "--threshold", "20", "--seed", "1", "--output", s(&out),
    ]);
    let table = std::fs::read_to_string(&out).unwrap();
    assert!(!table.contains("rare"));
    assert!(table.contains("common"));
    let events = manifest(&dir.path().join("table.tsv.manifest.jsonl"));
    let joint = events.iter().find(|e| e["label"] == "joint").unwrap();
    assert_eq!(joint["threshold"], 20.0);
    assert!(joint["censored"].as_u64().unwrap() >= 1);
}

#[test]
fn missing_column_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, "id,feature,observation\nu,f,1\n").unwrap();
    let out = dpmi(&["rank", "--input", s(&input), "--no-dp"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "missing_column");
    assert!(err["message"].as_str().unwrap().contains("partition"));
}

#[test]
fn two_partition_ranking_matches_golden_file() {
    let golden = std::fs::read_to_string(data("toy_rank.golden.tsv")).unwrap();
    let input = data("toy.csv");
    for _ in 0..3 {
        assert_eq!(ok(&["rank", "--input", s(&input), "--no-dp"]), golden);
    }
}

#[test]
fn swap_and_top_k() {
    let input = data("toy.csv");
    let flipped = ok(&["rank", "--input", s(&input), "--no-dp", "--swap"]);
    assert_eq!(flipped, ok(&["flip", "--input", s(&input), "--no-dp"]));
    // flipped rows put features in the partition column
    assert!(flipped.lines().nth(1).unwrap().starts_with("compiler\t"));

    let top = ok(&["rank", "--input", s(&input), "--no-dp", "--top-k", "5"]);
    assert_eq!(top.lines().count(), 1 + 5);
}

#[test]
fn rank_reads_an_aggregated_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.jsonl");
    ok(&[
        "aggregate", "--input", s(&data("toy.csv")), "--no-dp", "--output", s(&table),
        "--output-format", "json-lines",
    ]);
    let from_table = ok(&["rank", "--table", s(&table), "--no-dp"]);
    assert_eq!(from_table, std::fs::read_to_string(data("toy_rank.golden.tsv")).unwrap());
}

#[test]
fn folds_compose_under_the_total_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("id,feature,partition,observation\n");
    for i in 0..2000 {
        if i % 4 == 0 {
            text.push_str(&format!("e{i},seed,kw,1\ne{i},hot,kw,1\n"));
        } else {
            text.push_str(&format!("e{i},cold{},kw,1\n", i % 3));
        }
    }
    std::fs::write(dir.path().join("kw.csv"), text).unwrap();
    let specs = dir.path().join("folds.jsonl");
    std::fs::write(
        &specs,
        "{\"input\":\"kw.csv\",\"seeds\":[\"seed\"],\"epsilon\":0.5,\"top_k\":2}\n\
         {\"input\":\"kw.csv\",\"seeds\":\"previous\",\"epsilon\":0.5,\"top_k\":2}\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["fold", "--folds", s(&specs), "--epsilon", "1.0", "--seed", "4", "--output", s(&out)]);
    assert!(out.join("fold1.tsv").exists() && out.join("fold2.tsv").exists());
    let events = manifest(&out.join("manifest.jsonl"));
    let budget = events.iter().find(|e| e["event"] == "budget").unwrap();
    assert!((budget["spent"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(budget["total"], 1.0);

    let over = dir.path().join("over.jsonl");
    std::fs::write(
        &over,
        "{\"input\":\"kw.csv\",\"seeds\":[\"seed\"],\"epsilon\":0.75,\"top_k\":2}\n\
         {\"input\":\"kw.csv\",\"seeds\":\"previous\",\"epsilon\":0.75,\"top_k\":2}\n",
    )
    .unwrap();
    let failed = dpmi(&["fold", "--folds", s(&over), "--epsilon", "1.0", "--seed", "4", "--output", s(&out)]);
    assert_eq!(failed.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&failed.stderr).unwrap();
    assert_eq!(err["error"], "budget_exceeded");
}

#[test]
fn eval_writes_sweep_stability_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    ok(&[
        "eval", "--synth", "users=3000,features=60,partitions=4", "--seed", "2", "--trials", "2",
        "--top-k", "40", "--runtime", "--partitions", "3", "--runtime-rows", "5000", "--output", s(&out),
    ]);
    let sweep = std::fs::read_to_string(out.join("sweep.tsv")).unwrap();
    assert_eq!(sweep.lines().next().unwrap(), "epsilon\tp10\tp25\tp50\tp75\tp90\tdropped");
    assert_eq!(sweep.lines().count(), 1 + 6);
    let stability = std::fs::read_to_string(out.join("stability.tsv")).unwrap();
    assert_eq!(stability.lines().count(), 1 + 10);
    let runtime = std::fs::read_to_string(out.join("runtime.tsv")).unwrap();
    let row: Vec<&str> = runtime.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[..2], ["5000", "3"]);
    assert!(row[4].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn disabled_pseudo_epsilon_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    ok(&[
        "eval", "--synth", "users=2000,features=30,partitions=3", "--seed", "2", "--trials", "1",
        "--epsilons", "off", "--output", s(&out),
    ]);
    let sweep = std::fs::read_to_string(out.join("sweep.tsv")).unwrap();
    assert_eq!(sweep.lines().nth(1).unwrap(), "inf\t0\t0\t0\t0\t0\t0");
}

#[test]
fn usage_errors_are_json() {
    let out = dpmi(&["rank", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");
    let out = dpmi(&["rank", "--input", s(&data("toy.csv"))]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("--seed"));
}
