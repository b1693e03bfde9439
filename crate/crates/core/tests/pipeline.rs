use std::fs;
use std::path::Path;

use fairrank::config::ExperimentConfig;
use fairrank::metrics::evaluate_all;
use fairrank::pipeline::{self, prepare, rerank_input, score_model};
use fairrank::report::CSV_COLUMNS;
use fairrank::rerank::top_k;
use fairrank::synthetic::{to_tsv, zipf_interactions, ZipfSpec};

fn workspace(grid: &str, models: &str) -> (tempfile::TempDir, ExperimentConfig) {
    let dir = tempfile::tempdir().unwrap();
    let spec = ZipfSpec {
        users: 80,
        items: 60,
        per_user: (8, 20),
        ..ZipfSpec::default()
    };
    fs::write(
        dir.path().join("data.tsv"),
        to_tsv(&zipf_interactions(&spec)),
    )
    .unwrap();
    let text = format!(
        "dataset.name = \"toy\"\ninput.path = \"data.tsv\"\nsplit.seed = 5\nscorer.models = {models}\nmf.dim = 8\nmf.iters = 5\nrerank.k = 5\nrerank.lambda_grid = {grid}\noutput.dir = \"out\"\n"
    );
    fs::write(dir.path().join("exp.toml"), &text).unwrap();
    let cfg = ExperimentConfig::load(&dir.path().join("exp.toml"), &[]).unwrap();
    (dir, cfg)
}

fn text(a: &pipeline::Artifacts, name: &str) -> String {
    String::from_utf8(a.files[name].clone()).unwrap()
}

#[test]
fn single_zero_grid_gives_one_n_row() {
    let (_dir, cfg) = workspace("[0.0]", "[\"mf\"]");
    let out = pipeline::cmd_run(&cfg).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].kind.as_str(), "N");
    let md = text(&out, "report.md");
    assert_eq!(md.lines().filter(|l| l.starts_with("| mf ")).count(), 1);
}

#[test]
fn row_cardinality_and_columns() {
    let (_dir, cfg) = workspace("[1.0, 5.0, 20.0]", "[\"mf\", \"popularity\"]");
    let out = pipeline::cmd_run(&cfg).unwrap();
    let kinds: Vec<&str> = out.rows.iter().map(|r| r.kind.as_str()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "N").count(), 2);
    assert_eq!(kinds.iter().filter(|k| **k == "P").count(), 6);
    let csv = text(&out, "report.csv");
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, CSV_COLUMNS);
    assert_eq!(csv.lines().count(), 9);
    let lists = out.files.keys().filter(|k| k.starts_with("lists/")).count();
    assert_eq!(lists, 8);
    for row in &out.rows {
        let r = &row.report;
        assert_eq!(r.short_count + r.long_count, r.list_count * 5);
    }
}

#[test]
fn n_row_equals_plain_top_k_evaluation() {
    let (_dir, cfg) = workspace("[2.0]", "[\"mf\"]");
    let out = pipeline::cmd_run(&cfg).unwrap();
    let prep = prepare(&cfg).unwrap();
    let raw = score_model(&cfg, &prep, "mf").unwrap();
    let masked = rerank_input(&cfg, &prep, &raw).unwrap();
    let plain = top_k(&masked, cfg.rerank.k).unwrap();
    let direct = evaluate_all(&plain, &prep.judgments, &prep.train, &prep.part).unwrap();
    assert_eq!(out.rows[0].report, direct);
}

#[test]
fn split_outputs_are_reproducible() {
    let (dir, cfg) = workspace("[1.0]", "[\"mf\"]");
    let a = pipeline::cmd_split(&cfg).unwrap();
    let b = pipeline::cmd_split(&cfg).unwrap();
    for name in ["train.tsv", "valid.tsv", "test.tsv", "partition.tsv"] {
        assert_eq!(a.files[name], b.files[name], "{name}");
    }
    let prep = prepare(&cfg).unwrap();
    assert_eq!(text(&a, "partition.tsv").lines().count(), prep.ds.n());
    let lines = ["train.tsv", "valid.tsv", "test.tsv"]
        .iter()
        .map(|n| text(&a, n).lines().count())
        .sum::<usize>();
    assert_eq!(lines, prep.ds.interactions.len());

    let out_dir = dir.path().join("out");
    pipeline::commit(&out_dir, &a).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    let snapshot = manifest["config"].as_str().unwrap();
    let reparsed = ExperimentConfig::parse(snapshot, Path::new("/unused"), &[]).unwrap();
    assert_eq!(reparsed, cfg);
    let train_hash = manifest["outputs"]["train.tsv"].as_str().unwrap();
    assert_eq!(train_hash, pipeline::sha256_hex(&a.files["train.tsv"]));
}

#[test]
fn exported_scores_import_back() {
    let (dir, mut cfg) = workspace("[1.0]", "[\"mf\"]");
    let scored = pipeline::cmd_score(&cfg).unwrap();
    let path = dir.path().join("mf_scores.tsv");
    fs::write(&path, &scored.files["scores/mf.tsv"]).unwrap();
    cfg.scorer.models.clear();
    cfg.scorer.import.insert("ext".into(), path);
    let prep = prepare(&cfg).unwrap();
    let imported = score_model(&cfg, &prep, "ext").unwrap();

    let mut mf_cfg = cfg.clone();
    mf_cfg.scorer.models = vec!["mf".into()];
    let native = score_model(&mf_cfg, &prep, "mf").unwrap();
    assert_eq!(imported.values(), native.values());
}

#[test]
fn evaluate_reproduces_run_rows() {
    let (dir, cfg) = workspace("[3.0]", "[\"popularity\"]");
    let run = pipeline::cmd_run(&cfg).unwrap();
    let lists_dir = dir.path().join("lists");
    fs::create_dir_all(&lists_dir).unwrap();
    let mut paths = Vec::new();
    for (name, bytes) in run.files.iter().filter(|(k, _)| k.starts_with("lists/")) {
        let p = dir.path().join(name);
        fs::write(&p, bytes).unwrap();
        paths.push(p);
    }
    let eval = pipeline::cmd_evaluate(&cfg, &paths).unwrap();
    assert_eq!(eval.rows.len(), run.rows.len());
    for row in &eval.rows {
        let twin = run
            .rows
            .iter()
            .find(|r| r.lambda == row.lambda && r.model == row.model)
            .unwrap();
        assert_eq!(twin.report, row.report);
        assert_eq!(twin.kind, row.kind);
    }
}

#[test]
fn list_files_have_six_columns() {
    let (_dir, cfg) = workspace("[4.0]", "[\"random\"]");
    let out = pipeline::cmd_rerank(&cfg).unwrap();
    let lists = text(&out, "lists/random_P_4.tsv");
    for line in lists.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 6);
        assert!(cols[5] == "short" || cols[5] == "long");
        cols[3].parse::<f64>().unwrap();
        cols[4].parse::<f64>().unwrap();
    }
}

#[test]
fn missing_input_is_a_validation_error() {
    let (dir, mut cfg) = workspace("[1.0]", "[\"mf\"]");
    cfg.input.path = dir.path().join("nope.tsv");
    let err = pipeline::cmd_run(&cfg).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn cli_exit_codes() {
    let (dir, _cfg) = workspace("[1.0]", "[\"popularity\"]");
    let bin = env!("CARGO_BIN_EXE_fairrank");
    let config = dir.path().join("exp.toml");
    let status = std::process::Command::new(bin)
        .args(["run", "--config"])
        .arg(&config)
        .args(["--set", "split.ratios=[0.6,0.1,0.1]"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    let status = std::process::Command::new(bin)
        .args(["run", "--config"])
        .arg(&config)
        .args(["--set", "rerank.k=1000"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(!dir.path().join("out/report.csv").exists());

    let env_out = dir.path().join("from_env");
    let status = std::process::Command::new(bin)
        .args(["split", "--config"])
        .arg(&config)
        .env("FAIRRANK_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(env_out.join("partition.tsv").exists());

    let status = std::process::Command::new(bin)
        .args(["verify", "--instances", "30"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    let status = std::process::Command::new(bin)
        .args(["verify", "--instances", "30", "--mutate-tie-break"])
        .output()
        .unwrap();
    assert_ne!(status.status.code(), Some(0));
}
