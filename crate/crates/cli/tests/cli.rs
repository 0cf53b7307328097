use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn embench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small corpus plus a plan that fits it.
const SMALL_PLAN: [&str; 4] = ["--train-clusters", "30", "--holdout-clusters", "12"];

fn small_corpus(dir: &Path, seed: &str) -> PathBuf {
    let path = dir.join(format!("corpus-{seed}.jsonl"));
    let out = embench(&["-q", "gen-corpus", "--seed", seed, "--clusters", "60", "--out", p(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

fn small_bundles(dir: &Path, corpus: &Path, name: &str) -> PathBuf {
    let out_dir = dir.join(name);
    let mut args = vec!["-q", "build", "--corpus", p(corpus), "--out", p(&out_dir)];
    args.extend(SMALL_PLAN);
    let out = embench(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    out_dir
}

fn cluster_count(corpus: &Path) -> usize {
    let text = fs::read_to_string(corpus).unwrap();
    let mut ids: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["cluster_id"].as_str().unwrap().to_string())
        .collect();
    ids.sort();
    ids.dedup();
    ids.len()
}

fn subdirs(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.join("manifest.json").exists() {
            out.push(path);
        } else if path.is_dir() {
            out.extend(subdirs(&path));
        }
    }
    out
}

#[test]
fn gen_corpus_is_deterministic_and_records_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for path in [&a, &b] {
        let out = embench(&["gen-corpus", "--seed", "7", "--clusters", "350", "--out", p(path)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(cluster_count(&a), 350);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let cfg = read_json(&dir.path().join("a.jsonl.config.json"));
    assert_eq!(cfg["resolved"]["synth"]["n_clusters"], 350);
    assert_eq!(cfg["resolved"]["synth"]["records_per_cluster"], serde_json::json!([10, 20]));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = embench(&["gen-corpus", "--out", p(&dir.path().join("c.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--seed"));
    assert_eq!(code(&embench(&["no-such-command"])), 2);
}

#[test]
fn config_file_replaces_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("c.jsonl");
    let cfg = dir.path().join("gen.json");
    let body = serde_json::json!({ "seed": 5, "clusters": 12, "out": out_path, "synth": { "image_dim": 8 } });
    fs::write(&cfg, body.to_string()).unwrap();
    let out = embench(&["gen-corpus", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(cluster_count(&out_path), 12);
    let first: Value = serde_json::from_str(fs::read_to_string(&out_path).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["image_vec"].as_array().unwrap().len(), 8);

    // A flag wins over the file.
    let out = embench(&["gen-corpus", "--config", p(&cfg), "--clusters", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(cluster_count(&out_path), 9);

    fs::write(&cfg, r#"{"seed": 5, "bogus": 1}"#).unwrap();
    assert_eq!(code(&embench(&["gen-corpus", "--config", p(&cfg)])), 2);
}

#[test]
fn build_writes_four_bundles_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    assert_eq!(code(&embench(&["-q", "gen-corpus", "--seed", "7", "--out", p(&corpus)])), 0);
    let out_dir = dir.path().join("bundles");
    let out = embench(&["-q", "build", "--corpus", p(&corpus), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<String> = subdirs(&out_dir)
        .iter()
        .map(|d| d.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["cfm", "om", "rl", "vanilla"]);
    let train: Vec<Vec<u8>> = names.iter().map(|n| fs::read(out_dir.join(n).join("train.jsonl")).unwrap()).collect();
    assert!(train.windows(2).all(|w| w[0] == w[1]));
    assert!(out_dir.join("build.config.json").exists());
}

#[test]
fn per_category_build_gives_sixteen_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let out = embench(&["-q", "gen-corpus", "--seed", "7", "--clusters", "90", "--categories", "3", "--out", p(&corpus)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out_dir = dir.path().join("bundles");
    let out = embench(&[
        "-q", "build", "--corpus", p(&corpus), "--out", p(&out_dir), "--per-category",
        "--train-clusters", "15", "--holdout-clusters", "8",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(subdirs(&out_dir).len(), 16);
}

#[test]
fn oversized_plan_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), "7");
    let out_dir = dir.path().join("bundles");
    let out = embench(&["build", "--corpus", p(&corpus), "--out", p(&out_dir), "--train-clusters", "300", "--holdout-clusters", "100"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("not enough clusters"), "{}", stderr(&out));
    assert!(!out_dir.exists());
}

#[test]
fn audit_passes_clean_and_fails_tampered_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), "7");
    let bundles = small_bundles(dir.path(), &corpus, "b");
    let om = bundles.join("om");
    let internal = dir.path().join("internal.json");
    let out = embench(&["audit", "--bundle", p(&om), "--out", p(&internal)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let external = dir.path().join("external.json");
    let out = embench(&[
        "audit", "--paradigm", "om",
        "--train", p(&om.join("train.jsonl")),
        "--val", p(&om.join("val.jsonl")),
        "--test", p(&om.join("test.jsonl")),
        "--records", p(&om.join("records.jsonl")),
        "--out", p(&external),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = |v: Value| v["reports"].as_object().unwrap().values().next().unwrap().clone();
    assert_eq!(first(read_json(&internal)), first(read_json(&external)));

    // Swap a training record into one mismatched test pair.
    let train_record = {
        let line = fs::read_to_string(om.join("train.jsonl")).unwrap();
        let v: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        v["left_id"].as_str().unwrap().to_string()
    };
    let test = fs::read_to_string(om.join("test.jsonl")).unwrap();
    let mut lines: Vec<String> = test.lines().map(str::to_string).collect();
    let idx = lines.iter().position(|l| l.contains("\"mismatched\"")).unwrap();
    let mut pair: Value = serde_json::from_str(&lines[idx]).unwrap();
    let keep = pair["left_id"].as_str().unwrap().to_string();
    let (l, r) = if keep < train_record { (keep, train_record) } else { (train_record, keep) };
    pair["left_id"] = Value::from(l);
    pair["right_id"] = Value::from(r);
    lines[idx] = pair.to_string();
    fs::write(om.join("test.jsonl"), lines.join("\n") + "\n").unwrap();
    let out = embench(&["audit", "--bundle", p(&om)]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(stderr(&out).contains("no_seen_clusters"));
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = small_corpus(d, "7");
    let bundles = small_bundles(d, &corpus, "b");
    let model = d.join("text.json");
    let out = embench(&["-q", "train", "--bundle", p(&bundles.join("rl")), "--epochs", "5", "--out", p(&model)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fused = d.join("fused.json");
    let out = embench(&["-q", "train", "--bundle", p(&bundles.join("rl")), "--matcher", "fused", "--epochs", "5", "--out", p(&fused)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let report = d.join("report.json");
    let preds = d.join("preds.jsonl");
    let out = embench(&[
        "-q", "eval", "--bundle", p(&bundles.join("om")), "--model", p(&model), "--out", p(&report), "--predictions", p(&preds),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["rows"].as_array().unwrap().len(), 4);
    assert!(r["inputs"]["model0"].is_string() && r["inputs"]["corpus"].is_string());
    let n_test = fs::read_to_string(bundles.join("om/test.jsonl")).unwrap().lines().count();
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), n_test);
    let out = embench(&["-q", "eval", "--bundle", p(&bundles.join("om")), "--model", p(&model), "--model", p(&fused), "--out", p(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_json(&report)["rows"].as_array().unwrap().len(), 8);

    let curve = d.join("curve.json");
    let cfg = d.join("study.json");
    fs::write(&cfg, r#"{"study": {"plan": {"n_train_clusters": 30, "n_holdout_clusters": 12}}}"#).unwrap();
    let out = embench(&["-q", "sweep", "--corpus", p(&corpus), "--axis", "test", "--seeds", "1", "--epochs", "5", "--config", p(&cfg), "--out", p(&curve)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let c = read_json(&curve);
    let curves = c["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 4);
    assert!(curves.iter().all(|c| c["points"].as_array().unwrap().len() == 4));

    let csv = d.join("curve.csv");
    let out = embench(&["report", "--input", p(&curve), "--format", "csv", "--out", p(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 16);
    let out = embench(&["report", "--input", p(&report)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Vanilla"));

    let study = d.join("study-report.json");
    let out = embench(&["-q", "eval", "--corpus", p(&corpus), "--experiment", "modalities", "--seeds", "1", "--ks", "3,10", "--epochs", "3", "--config", p(&cfg), "--out", p(&study)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_json(&study)["rows"].as_array().unwrap().len(), 2 * 4 * 3);
}

#[test]
fn eval_refuses_a_model_from_another_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = small_bundles(d, &small_corpus(d, "7"), "a");
    let b = small_bundles(d, &small_corpus(d, "8"), "b");
    let model = d.join("m.json");
    assert_eq!(code(&embench(&["-q", "train", "--bundle", p(&a.join("om")), "--epochs", "2", "--out", p(&model)])), 0);
    let report = d.join("r.json");
    let out = embench(&["eval", "--bundle", p(&b.join("om")), "--model", p(&model), "--out", p(&report)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("provenance"));
    assert!(!report.exists());
}

#[test]
fn reruns_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = small_corpus(d, "7");
    let mut models = Vec::new();
    for name in ["x", "y"] {
        let bundles = small_bundles(d, &corpus, name);
        let model = d.join(format!("{name}.json"));
        let out = embench(&["-q", "train", "--bundle", p(&bundles.join("vanilla")), "--matcher", "fused", "--epochs", "3", "--out", p(&model)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        for f in ["train.jsonl", "val.jsonl", "test.jsonl", "records.jsonl", "manifest.json"] {
            assert_eq!(fs::read(bundles.join("om").join(f)).unwrap(), fs::read(d.join("x/om").join(f)).unwrap(), "{f}");
        }
        models.push(fs::read(model).unwrap());
    }
    assert_eq!(models[0], models[1]);
}
