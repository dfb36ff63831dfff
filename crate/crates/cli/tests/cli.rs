mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use common::{read, Project};

fn egotime(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egotime")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = egotime(dir, args);
    assert!(out.status.success(), "{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    egotime(dir, args).status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_two() {
    let project = Project::small();
    let dir = project.dir.path();
    assert_eq!(code(dir, &[]), 2);
    assert_eq!(code(dir, &["probe", "--bogus"]), 2);
    assert_eq!(code(dir, &["train", "--labels", "x.csv"]), 2);

    std::fs::write(project.path("bad.json"), r#"{"corpus_root":"corpus","storage":{"labels":"l.csv","timelines":"timelines","reports":"reports"},"extra":1}"#).unwrap();
    let out = egotime(dir, &["--config", "bad.json", "probe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));
}

#[test]
fn probe_windows_and_audit() {
    let project = Project::small();
    let dir = project.dir.path();
    let config = project.write_config(json!({}));
    let config = config.to_str().unwrap();

    let records: Value =
        serde_json::from_slice(&ok(dir, &["--config", config, "probe", "--inventory", "inv.json"])).unwrap();
    let records = records.as_array().unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r["readiness"] == "READY"));
    assert_eq!(records[2]["video_id"], "syn002");

    let windows: Value = serde_json::from_slice(&ok(dir, &["windows", &project.video_dir(0)])).unwrap();
    assert_eq!(windows.as_array().unwrap().len(), 4);
    assert_eq!(windows[1]["end_time_s"], 20.0);

    project.write_labels_csv("labels.csv");
    let report: Value = serde_json::from_slice(&ok(
        dir,
        &["audit", "--labels", "labels.csv", "--inventory", "inv.json", "--tables", "tables"],
    ))
    .unwrap();
    assert_eq!(report["integrity"]["total_rows"], 12);
    assert_eq!(report["integrity"]["passed"], true);
    assert!(project.path("tables").read_dir().unwrap().count() > 0);

    assert_eq!(code(dir, &["audit", "--labels", "missing.csv", "--inventory", "inv.json"]), 2);
    assert_eq!(code(dir, &["windows", "no/such/video"]), 2);
}

#[test]
fn sample_plans_reproduce() {
    let project = Project::small();
    let dir = project.dir.path();
    let video = project.video_dir(1);
    let args = ["sample-plan", video.as_str(), "--kcov", "2", "--krand", "1", "--seed", "9"];
    let first = ok(dir, &args);
    assert_eq!(first, ok(dir, &args));
    let plan: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(
        plan["coverage_indices"].as_array().unwrap().len() + plan["random_indices"].as_array().unwrap().len(),
        3
    );
}

fn train_pair(project: &Project, config: &str) {
    let dir = project.dir.path();
    project.write_labels_csv("labels.csv");
    for run in ["E1", "F1"] {
        let feats = format!("{run}.fea");
        ok(dir, &["--config", config, "--out", &feats, "features", "--run", run]);
        let summary: Value = serde_json::from_slice(&ok(
            dir,
            &[
                "--config",
                config,
                "--out",
                &format!("{run}.model.json"),
                "train",
                "--features",
                &feats,
                "--labels",
                "labels.csv",
                "--run",
                run,
                "--no-holdout",
            ],
        ))
        .unwrap();
        assert_eq!(summary["run_id"], run);
    }
}

#[test]
fn features_train_predict_timeline() {
    let project = Project::small();
    let dir = project.dir.path();
    let config = project.write_config(json!({}));
    let config = config.to_str().unwrap();
    train_pair(&project, config);

    let lines =
        ok(dir, &["--config", config, "predict", "--model", "E1.model.json", "--features", "E1.fea", "--tau", "0"]);
    let lines: Vec<Value> =
        lines.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
    assert_eq!(lines.len(), 12);
    for line in &lines {
        let total: f64 = line["probs"].as_object().unwrap().values().map(|p| p.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(line["label"], line["argmax_label"]);
    }

    let video = project.video_dir(0);
    let args = [
        "--config",
        config,
        "--out",
        "t1.jsonl",
        "timeline",
        "--video",
        &video,
        "--ctx-model",
        "E1.model.json",
        "--act-model",
        "F1.model.json",
    ];
    ok(dir, &args);
    let body = String::from_utf8(read(&project.path("t1.jsonl"))).unwrap();
    let mut lines = body.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["video_id"], "syn000");
    assert_eq!(header["run_id"], "E1.model+F1.model");
    let records: Vec<Value> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    assert_eq!(records[0]["context_transition"], true);
    assert_eq!(records[3]["start_time"], 30.0);

    let again = [&args[..3], &["t2.jsonl"], &args[4..]].concat();
    ok(dir, &again);
    assert_eq!(read(&project.path("t1.jsonl")), read(&project.path("t2.jsonl")));

    // a context model in the activity slot is rejected
    let swapped = [
        "--config",
        config,
        "timeline",
        "--video",
        &video,
        "--ctx-model",
        "F1.model.json",
        "--act-model",
        "E1.model.json",
    ];
    assert_eq!(code(dir, &swapped), 2);
}

#[test]
fn evaluate_reports_clean_windows() {
    let project = Project::small();
    let dir = project.dir.path();
    let config = project.write_config(json!({}));
    let config = config.to_str().unwrap();
    train_pair(&project, config);
    let report: Value = serde_json::from_slice(&ok(
        dir,
        &["evaluate", "--model", "E1.model.json", "--features", "E1.fea", "--labels", "labels.csv", "--tables", "eval"],
    ))
    .unwrap();
    let clean = report["n_test"].as_u64().unwrap();
    let excluded = report["excluded_transition_windows"].as_u64().unwrap();
    assert_eq!(clean + excluded, 12);
    assert!(project.path("eval/confusion.csv").is_file());

    // features of one layout cannot score a model of another
    assert_eq!(
        code(dir, &["evaluate", "--model", "E1.model.json", "--features", "F1.fea", "--labels", "labels.csv"]),
        2
    );
}

#[test]
fn grid_outputs_reproduce() {
    let project = Project::new(&egotime_core::synthetic::SyntheticSpec {
        n_videos: 4,
        windows_per_video: 4,
        width: 32,
        height: 18,
        ..Default::default()
    });
    let dir = project.dir.path();
    project.write_labels_csv("labels.csv");
    let grid = json!({
        "corpus_root": "corpus",
        "labels": "labels.csv",
        "encoders": { "ViT-B/32": { "source": "test_hash", "dim": 32 } },
        "runs": ["E1", "F1"],
        "split_seed": 5,
        "test_fraction": 0.25,
    });
    std::fs::write(project.path("grid.json"), grid.to_string()).unwrap();
    let summary: Value = serde_json::from_slice(&ok(dir, &["--config", "grid.json", "--out", "g1", "grid"])).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    for f in [
        "summary.csv",
        "splits.json",
        "models/E1.json",
        "reports/E1.json",
        "reports/F1_confusion.csv",
        "reports/recurring_context.json",
    ] {
        assert!(project.path("g1").join(f).is_file(), "{f}");
    }
    let splits: Value = serde_json::from_slice(&read(&project.path("g1/splits.json"))).unwrap();
    assert_eq!(splits["E1"], splits["F1"]);
    assert_eq!(splits["E1"]["test_video_ids"].as_array().unwrap().len(), 1);

    ok(dir, &["--config", "grid.json", "--out", "g2", "grid"]);
    for f in ["summary.csv", "models/E1.json", "models/F1.json", "reports/E1.json"] {
        assert_eq!(read(&project.path("g1").join(f)), read(&project.path("g2").join(f)), "{f}");
    }

    // an encoder missing from the grid registry is a configuration error
    let strict = json!({ "corpus_root": "corpus", "labels": "labels.csv", "runs": ["E1"], "out_dir": "g3" });
    std::fs::write(project.path("strict.json"), strict.to_string()).unwrap();
    assert_eq!(code(dir, &["--config", "strict.json", "grid"]), 2);
}

#[test]
fn export_roundtrips_labels() {
    let project = Project::small();
    let dir = project.dir.path();
    let csv = project.write_labels_csv("labels.csv");
    let jsonl = ok(dir, &["--out", "labels.jsonl", "export", "--labels", "labels.csv", "--format", "jsonl"]);
    assert!(jsonl.is_empty());
    let back = ok(dir, &["export", "--labels", "labels.jsonl", "--format", "csv"]);
    assert_eq!(back, read(&csv));
    assert_eq!(
        ok(dir, &["export", "--labels", "labels.csv", "--pass", "2"]).iter().filter(|b| **b == b'\n').count(),
        1
    );
}
