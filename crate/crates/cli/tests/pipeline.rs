mod common;

use std::fs::File;
use std::io::Write;

use common::*;
use phytoset::evaluator::{write_prediction_line, PredictionRecord};
use phytoset::sampler::{read_manifest, SamplingPolicy};
use phytoset::splitter::{read_splits, Split};
use serde_json::Value;

fn counts(i: usize) -> [usize; 4] {
    match i {
        0 => [5, 20, 10, 14],
        1 => [60, 90, 70, 80],
        _ => [i, 30, 20, 25],
    }
}

/// Runs ingest, sample and split; returns the corpus.
fn prepared() -> Corpus {
    let c = build_corpus(11, counts);
    let entries = c.path_str("entries.csv");
    let mut args = vec!["ingest", "--catalog", c.catalog.to_str().unwrap(), "--out", &entries];
    for i in &c.inputs {
        args.extend(["--input", i.as_str()]);
    }
    run_ok(&args);
    run_ok(&["sample", "--in", &entries, "--catalog", c.catalog.to_str().unwrap(), "--seed", "7", "--out", &c.path_str("manifest.csv"), "--stats-out", &c.path_str("stats.json")]);
    run_ok(&["split", "--manifest", &c.path_str("manifest.csv"), "--seed", "7", "--out", &c.path_str("splits.csv"), "--truth-out", &c.path_str("truth.csv"), "--report-out", &c.path_str("split_report.json")]);
    c
}

fn write_predictions(c: &Corpus, name: &str, provider: &str) -> String {
    let (manifest, names) = read_manifest(File::open(c.path("manifest.csv")).unwrap(), SamplingPolicy::default()).unwrap();
    let splits = read_splits(File::open(c.path("splits.csv")).unwrap()).unwrap();
    let path = c.path(name);
    let mut out = File::create(&path).unwrap();
    for e in &manifest.entries {
        if splits.get(&e.image_id) == Some(Split::Test) {
            let record = PredictionRecord {
                image_id: e.image_id.clone(),
                provider_id: provider.into(),
                ranked: synthetic_scores(&format!("{provider}{}", e.uri), &names[&e.taxon_id]),
                is_full_distribution: false,
            };
            writeln!(out, "{}", write_prediction_line(&record)).unwrap();
        }
    }
    path.display().to_string()
}

#[test]
fn sample_reports_seed_and_is_reproducible() {
    let c = prepared();
    let first = read(&c.path("manifest.csv"));
    let stdout = run_ok(&["sample", "--in", &c.path_str("entries.csv"), "--catalog", c.catalog.to_str().unwrap(), "--seed", "7", "--out", &c.path_str("again.csv")]);
    assert!(stdout.starts_with("seed: 7\n"));
    assert_eq!(first, read(&c.path("again.csv")));
    assert!(first.starts_with("image_id,uri,taxon_id,canonical_name,source\n"));

    let meta: Value = serde_json::from_str(&read(&c.path("manifest.csv.meta.json"))).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["command"], "sample");
    assert_eq!(meta["inputs"].as_array().unwrap().len(), 2);

    let stats: Value = serde_json::from_str(&read(&c.path("stats.json"))).unwrap();
    // species 0 has 49 images and is dropped
    assert_eq!(stats["dataset"]["total_species"], 11);
    assert_eq!(stats["dataset"]["species_at_max"], 1);

    run_ok(&["sample", "--in", &c.path_str("entries.csv"), "--seed", "8", "--out", &c.path_str("other.csv")]);
    assert_ne!(first, read(&c.path("other.csv")));
}

#[test]
fn export_and_eval() {
    let c = prepared();
    let csv = run_ok(&["export", "--manifest", &c.path_str("manifest.csv"), "--splits", &c.path_str("splits.csv"), "--rewrite-from", "https://img.example/", "--rewrite-to", "gs://bucket/"]);
    assert!(csv.lines().all(|l| l.starts_with("TRAIN,gs://bucket/") || l.starts_with("VALIDATION,gs://bucket/") || l.starts_with("TEST,gs://bucket/")));
    assert!(!csv.contains('\r'));

    let pred = write_predictions(&c, "a.jsonl", "model-a");
    let report_path = c.path_str("report.json");
    run_ok(&["eval", "--pred", &pred, "--truth", &c.path_str("truth.csv"), "--out", &report_path, "--plot-out", &c.path_str("pr.csv")]);
    let report: Value = serde_json::from_str(&read(&c.path("report.json"))).unwrap();
    for key in ["top1", "top5", "mrr", "auc", "n_images", "per_source", "pr_points"] {
        assert!(!report[key].is_null(), "{key}");
    }
    assert_eq!(report["pr_points"].as_array().unwrap().len(), 101);
    assert!(read(&c.path("pr.csv")).starts_with("threshold,precision,recall\n0,"));

    let exact = run_ok(&["eval", "--pred", &pred, "--truth", &c.path_str("truth.csv"), "--exact"]);
    let exact: Value = serde_json::from_str(&exact).unwrap();
    assert!((exact["mrr"].as_f64().unwrap() - report["mrr"].as_f64().unwrap()).abs() < 1e-12);

    let csv = run_ok(&["eval", "--pred", &pred, "--truth", &c.path_str("truth.csv"), "--format", "csv"]);
    assert!(csv.starts_with("scope,metric,value\noverall,n_images,"));

    let pred_b = write_predictions(&c, "b.jsonl", "model-b");
    run_ok(&["eval", "--pred", &pred_b, "--truth", &c.path_str("truth.csv"), "--out", &c.path_str("report_b.json")]);
    let delta = run_ok(&["compare", "--a", &report_path, "--b", &c.path_str("report_b.json"), "--format", "csv"]);
    assert!(delta.starts_with("scope,metric,a,b,delta\noverall,top1,"));

    let genus = run_ok(&["genus-eval", "--pred", &pred, "--truth", &c.path_str("truth.csv"), "--catalog", c.catalog.to_str().unwrap()]);
    let genus: Value = serde_json::from_str(&genus).unwrap();
    assert!(genus["genus"]["top1"].as_f64().unwrap() >= genus["species"]["top1"].as_f64().unwrap());

    let stats = run_ok(&["stats", "--manifest", &c.path_str("manifest.csv")]);
    assert!(serde_json::from_str::<Value>(&stats).unwrap()["total_images"].as_u64().unwrap() > 0);
    let raw = run_ok(&["stats", "--entries", &c.path_str("entries.csv")]);
    assert!(serde_json::from_str::<Value>(&raw).unwrap()["species_ge_min"].as_u64().unwrap() >= 11);
}

#[test]
fn config_file_supplies_paths_and_policy() {
    let c = prepared();
    let config = c.path("pipeline.toml");
    std::fs::write(
        &config,
        format!(
            "[paths]\nmanifest = \"{}\"\nsplits = \"{}\"\n\n[split]\nseed = 7\n",
            c.path_str("manifest.csv"),
            c.path_str("splits_cfg.csv")
        ),
    )
    .unwrap();
    run_ok(&["split", "--config", config.to_str().unwrap()]);
    assert_eq!(read(&c.path("splits.csv")), read(&c.path("splits_cfg.csv")));
    run_ok(&["split", "--config", config.to_str().unwrap(), "--seed", "9"]);
    assert_ne!(read(&c.path("splits.csv")), read(&c.path("splits_cfg.csv")));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["eval"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("p.jsonl");
    let truth = dir.path().join("t.csv");
    std::fs::write(&pred, "{\"image_id\":\"a\",\"ranked\":[[\"x\",1.5]]}\n").unwrap();
    std::fs::write(&truth, "image_id,label_id\na,x\n").unwrap();
    let out = run(&["eval", "--pred", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert_eq!(run(&["eval", "--pred", "/missing", "--truth", "/missing"]).status.code(), Some(1));
}
