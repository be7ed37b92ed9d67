use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ltsap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltsap")).args(args).output().expect("spawn ltsap")
}

fn ok(args: &[&str]) -> Output {
    let out = ltsap(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn per_category_ap(report: &Value) -> Vec<f64> {
    report["per_category"].as_array().unwrap().iter().map(|r| r["ap"].as_f64().unwrap()).collect()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--categories", "8", "--max-count", "300", "--feature-dim", "8", "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["synth", "--categories", "20", "--zipf-s", "1.2", "--seed", "7", "--out-dir", s(dir)]);
    }
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "counts.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn synth_rejects_bad_fractions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltsap(&["synth", "--fractions", "0.5,0.5,0.5", "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--fractions"));
    assert!(!tmp.path().join("train.jsonl").exists());
}

#[test]
fn manifest_digests_match_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--seed", "3"]);
    let manifest = json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 3);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 4);
    for o in outputs {
        let path = tmp.path().join(o["path"].as_str().unwrap());
        let bytes = std::fs::read(path).unwrap();
        let digest: String = sha2_hex(&bytes);
        assert_eq!(o["sha256"].as_str().unwrap(), digest);
    }
}

fn sha2_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn eval_perfect_detections_score_one() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "eval",
        "--gt",
        s(&fixture("micro_gt.csv")),
        "--det",
        s(&fixture("micro_perfect_det.csv")),
        "--min-examples",
        "1",
        "--out-dir",
        s(tmp.path()),
    ]);
    let report = json(&tmp.path().join("eval.json"));
    assert_eq!(report["aggregate"]["map"].as_f64(), Some(1.0));
    assert_eq!(per_category_ap(&report), vec![1.0, 1.0, 1.0]);
}

#[test]
fn eval_empty_detections_score_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out");
    ok(&["eval", "--gt", s(&fixture("micro_gt.csv")), "--det", s(&empty), "--min-examples", "1", "--out-dir", s(&out)]);
    assert_eq!(per_category_ap(&json(&out.join("eval.json"))), vec![0.0, 0.0, 0.0]);
}

#[test]
fn eval_micro_fixture_matches_hand_enumeration() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "eval",
        "--gt",
        s(&fixture("micro_gt.csv")),
        "--det",
        s(&fixture("micro_det.csv")),
        "--min-examples",
        "1",
        "--out-dir",
        s(tmp.path()),
    ]);
    let report = json(&tmp.path().join("eval.json"));
    // category 0: FP, TP, TP over 2 positives; 1: TP, FP, TP; 2: FP, TP and one miss
    let expected = [0.5 * 0.5 + 0.5 * (2.0 / 3.0), 0.5 + 0.5 * (2.0 / 3.0), 0.5 * 0.5];
    for (got, want) in per_category_ap(&report).iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert_eq!(report["iou_threshold"].as_f64(), Some(0.5));
    assert_eq!(report["min_examples"].as_u64(), Some(1));
}

#[test]
fn eval_default_min_examples_leaves_nothing_eligible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltsap(&[
        "eval",
        "--gt",
        s(&fixture("micro_gt.csv")),
        "--det",
        s(&fixture("micro_det.csv")),
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!tmp.path().join("eval.json").exists());
}

#[test]
fn malformed_row_exits_3_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltsap(&[
        "eval",
        "--gt",
        s(&fixture("micro_gt.csv")),
        "--det",
        s(&fixture("malformed_det.csv")),
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("malformed_det.csv:2:"), "{err}");
    assert!(!tmp.path().join("eval.json").exists());
}

#[test]
fn sap_on_balanced_pools_equals_ap() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "sap",
        "--predictions",
        s(&fixture("balanced_predictions.jsonl")),
        "--min-examples",
        "1",
        "--out-dir",
        s(tmp.path()),
    ]);
    let report = json(&tmp.path().join("sap.json"));
    let rows = report["per_category"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["sap_mean"], r["ap"]);
        assert_eq!(r["sap_std"].as_f64(), Some(0.0));
    }
    assert!((rows[0]["ap"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(rows[1]["ap"].as_f64(), Some(1.0));
}

#[test]
fn sap_is_reproducible_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--seed", "1"]);
    let preds = tmp.path().join("preds.jsonl");
    let mut lines = String::new();
    for (i, line) in std::fs::read_to_string(data.join("train.jsonl")).unwrap().lines().enumerate() {
        let rec: Value = serde_json::from_str(line).unwrap();
        let scores: Vec<f64> = (0..8).map(|k| ((i * 7919 + k * 104729) % 1000) as f64 / 1000.0).collect();
        lines.push_str(&serde_json::json!({"id": rec["id"], "labels": rec["labels"], "scores": scores}).to_string());
        lines.push('\n');
    }
    std::fs::write(&preds, lines).unwrap();
    let run = |dir: &str, seed: &str| {
        let out = tmp.path().join(dir);
        ok(&[
            "sap",
            "--predictions",
            s(&preds),
            "--trials",
            "15",
            "--seed",
            seed,
            "--min-examples",
            "5",
            "--out-dir",
            s(&out),
        ]);
        std::fs::read(out.join("sap.json")).unwrap()
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "2"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn sap_without_eligible_categories_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltsap(&["sap", "--predictions", s(&fixture("balanced_predictions.jsonl")), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn sap_rejects_unparseable_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":0,\"labels\":[0],\"scores\":[0.5]}\n{not json}\n").unwrap();
    let out = ltsap(&["sap", "--predictions", s(&bad), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn stability_writes_one_row_per_trial_count() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "stability",
        "--gt",
        s(&fixture("micro_gt.csv")),
        "--det",
        s(&fixture("micro_det.csv")),
        "--category",
        "0",
        "--trials",
        "5,10,15,20,40",
        "--out-dir",
        s(tmp.path()),
    ]);
    let csv = std::fs::read_to_string(tmp.path().join("stability.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,mean,std");
    let ns: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["5", "10", "15", "20", "40"]);
}

#[test]
fn stability_unknown_category_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltsap(&[
        "stability",
        "--gt",
        s(&fixture("micro_gt.csv")),
        "--det",
        s(&fixture("micro_det.csv")),
        "--category",
        "9",
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn split_sets(path: &Path) -> (Vec<u64>, Vec<u64>) {
    let v = json(path);
    let ids = |k: &str| v[k].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    (ids("head"), ids("tail"))
}

#[test]
fn split_partitions_known_gaps() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, tau: &str| {
        let out = tmp.path().join(dir);
        ok(&[
            "split",
            "--train-report",
            s(&fixture("split_train.json")),
            "--val-report",
            s(&fixture("split_val.json")),
            "--tau",
            tau,
            "--out-dir",
            s(&out),
        ]);
        split_sets(&out.join("split.json"))
    };
    // gaps: 0.4, -0.1, 0 (boundary), 0.05; category 4 has no train AP
    assert_eq!(run("zero", "0"), (vec![0, 3], vec![1, 2, 4]));
    assert_eq!(run("wide", "0.1"), (vec![0], vec![1, 2, 3, 4]));
    assert_eq!(run("negative", "-0.2"), (vec![0, 1, 2, 3], vec![4]));
}

#[test]
fn report_summary_passes_aggregates_through() {
    let tmp = tempfile::tempdir().unwrap();
    let agg = |msap: f64, map: f64, n: u64| serde_json::json!({"map": map, "msap": msap, "eligible_categories": n});
    let sap = serde_json::json!({
        "mode": "classification",
        "n_trials": 15,
        "seed": 0,
        "include_background": true,
        "min_examples": 25,
        "per_category": [
            {"category": 0, "n_pos": 40, "n_neg": 60, "ap": 0.7, "sap_mean": 0.8, "sap_std": 0.01, "degenerate": false, "head": true},
            {"category": 1, "n_pos": 30, "n_neg": 70, "ap": 0.3, "sap_mean": 0.6, "sap_std": 0.02, "degenerate": false, "head": false}
        ],
        "aggregate": agg(0.7, 0.5, 2),
        "groups": {"all": agg(0.7, 0.5, 2), "tail": agg(0.6, 0.3, 1), "head": agg(0.8, 0.7, 1)}
    });
    let input = tmp.path().join("sap.json");
    std::fs::write(&input, sap.to_string()).unwrap();
    let out = tmp.path().join("report");
    ok(&["report", "--result", &format!("ours={}", s(&input)), "--out-dir", s(&out)]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(
        summary,
        "group,method,msap,map,eligible_categories\n\
         all,ours,0.700000,0.500000,2\n\
         tail,ours,0.600000,0.300000,1\n\
         head,ours,0.800000,0.700000,1\n"
    );
    for chart in ["ap_vs_sap.svg", "sap_comparison.svg"] {
        let svg = std::fs::read_to_string(out.join(chart)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{chart}");
    }
    assert!(!out.join("counts.svg").exists());
}

#[test]
fn report_rejects_duplicate_names() {
    let tmp = tempfile::tempdir().unwrap();
    let p = s(&fixture("split_val.json")).to_string();
    let out =
        ltsap(&["report", "--result", &format!("a={p}"), "--result", &format!("a={p}"), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_needs_split_for_two_stage() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("d"), &[]);
    let out = ltsap(&[
        "train",
        "--data",
        s(&tmp.path().join("d/train.jsonl")),
        "--variant",
        "two_stage",
        "--out-dir",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = ltsap(&["train", "--data", "x", "--variant", "nope", "--out-dir", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

fn assert_replay_identical(manifest: &Path, dir: &Path) {
    let replayed = dir.join("replayed");
    ok(&["replay", s(manifest), "--out-dir", s(&replayed)]);
    let original = json(manifest);
    for o in original["outputs"].as_array().unwrap() {
        let name = o["path"].as_str().unwrap();
        let a = std::fs::read(manifest.parent().unwrap().join(name)).unwrap();
        let b = std::fs::read(replayed.join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn train_predict_and_replay_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--seed", "5"]);
    let model = tmp.path().join("model");
    ok(&[
        "train",
        "--data",
        s(&data.join("train.jsonl")),
        "--variant",
        "naive_balanced",
        "--epochs1",
        "3",
        "--eval",
        s(&data.join("val.jsonl")),
        "--min-examples",
        "5",
        "--out-dir",
        s(&model),
    ]);
    let metrics = json(&model.join("metrics.json"));
    assert_eq!(metrics["variant"], "naive_balanced");
    assert_eq!(metrics["evaluations"].as_array().unwrap().len(), 1);
    let checkpoint = json(&model.join("checkpoint.json"));
    assert_eq!(checkpoint["manifest"]["config_hash"], metrics["config_hash"]);

    let preds = tmp.path().join("preds");
    ok(&[
        "predict",
        "--checkpoint",
        s(&model.join("checkpoint.json")),
        "--data",
        s(&data.join("val.jsonl")),
        "--out-dir",
        s(&preds),
    ]);
    let lines = std::fs::read_to_string(preds.join("predictions.jsonl")).unwrap();
    let val = std::fs::read_to_string(data.join("val.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), val.lines().count());

    assert_replay_identical(&model.join("manifest.json"), &tmp.path().join("m2"));
    assert_replay_identical(&preds.join("manifest.json"), &tmp.path().join("p2"));
}

#[test]
fn replay_detects_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt.csv");
    std::fs::copy(fixture("micro_gt.csv"), &gt).unwrap();
    let out = tmp.path().join("eval");
    ok(&["eval", "--gt", s(&gt), "--det", s(&fixture("micro_det.csv")), "--min-examples", "1", "--out-dir", s(&out)]);
    assert_replay_identical(&out.join("manifest.json"), &tmp.path().join("r1"));
    std::fs::write(&gt, "v,1,0.1,0.1,0.4,0.4,0\n").unwrap();
    let res = ltsap(&["replay", s(&out.join("manifest.json")), "--out-dir", s(&tmp.path().join("r2"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn help_documents_every_command() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "eval", "sap", "stability", "split", "train", "predict", "report", "replay"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
