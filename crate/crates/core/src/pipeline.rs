//! The batch pipeline: ingest → split → score → re-rank over the λ grid →
//! evaluate → report. Each command computes its artifacts in memory and
//! [`commit`] publishes them atomically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{parse_delimiter, ExperimentConfig, ReportFormat};
use crate::dataset::{
    build_dataset, parse_interactions, partition_popularity, split, write_interactions,
    write_partition, Dataset, InteractionMatrix, PopularityPartition, SplitTriple,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_all, RelevanceJudgments};
use crate::report::{
    parse_lists, render_csv, render_figure_csv, render_json, render_lists, render_markdown,
    ReportRow, RowKind,
};
use crate::rerank::{lambda_sweep, RerankConfig, SweepPoint};
use crate::scorers::{
    load_scores, mask_seen, mf_scorer, popularity_scorer, random_scorer, write_scores, ScoreMatrix,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dataset, split and partition shared by every command.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ds: Dataset,
    pub split: SplitTriple,
    pub train: InteractionMatrix,
    pub part: PopularityPartition,
    pub judgments: RelevanceJudgments,
    pub input_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Default)]
struct Timer {
    stages: Vec<StageTiming>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

impl Timer {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        self.stages.push(StageTiming {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

fn prepare_timed(cfg: &ExperimentConfig, timer: &mut Timer) -> Result<Prepared> {
    let (ds, input_hash) = timer.time("ingest", || {
        let path = &cfg.input.path;
        let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        let records = parse_interactions(bytes.as_slice(), &cfg.input.format()?)
            .map_err(|e| e.in_file(path))?;
        Ok((
            build_dataset(&records, cfg.input.dedup)?,
            sha256_hex(&bytes),
        ))
    })?;
    let split = timer.time("split", || split(&ds, cfg.split.ratios, cfg.split.seed))?;
    let (train, part) = timer.time("partition", || {
        let train = InteractionMatrix::new(ds.m(), ds.n(), &split.train)?;
        let part = partition_popularity(&split.train, ds.n(), cfg.partition.ratio)?;
        Ok((train, part))
    })?;
    let judgments = RelevanceJudgments::from_interactions(ds.m(), &split.test);
    Ok(Prepared {
        ds,
        split,
        train,
        part,
        judgments,
        input_hash,
    })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    prepare_timed(cfg, &mut Timer::default())
}

/// Raw (unmasked) score matrix for one configured model.
pub fn score_model(cfg: &ExperimentConfig, prep: &Prepared, model: &str) -> Result<ScoreMatrix> {
    let (m, n) = (prep.ds.m(), prep.ds.n());
    match model {
        "popularity" => popularity_scorer(&prep.train),
        "mf" => mf_scorer(&prep.train, &cfg.mf),
        "random" => random_scorer(m, n, cfg.random.seed),
        name => {
            let path = cfg
                .scorer
                .import
                .get(name)
                .ok_or_else(|| Error::Config(format!("unknown scorer {name:?}")))?;
            let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
            let delimiter = parse_delimiter(&cfg.scorer.import_delimiter)?;
            let loaded = load_scores(bytes.as_slice(), &prep.ds, delimiter, cfg.scorer.fill())
                .map_err(|e| e.in_file(path))?;
            log::info!(
                "{name}: imported scores cover {:.4} of cells",
                loaded.coverage
            );
            Ok(loaded.matrix)
        }
    }
}

/// Score matrix the re-ranker sees (seen items masked when configured).
pub fn rerank_input(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    raw: &ScoreMatrix,
) -> Result<ScoreMatrix> {
    if cfg.scorer.mask_seen {
        mask_seen(raw, &prep.train)
    } else {
        Ok(raw.clone())
    }
}

fn name_user(prep: &Prepared, err: Error) -> Error {
    match err {
        Error::InsufficientCandidates { user, available, k } => {
            let key = user
                .parse::<usize>()
                .ok()
                .filter(|&u| u < prep.ds.m())
                .map(|u| prep.ds.users.key(u).to_owned())
                .unwrap_or(user);
            Error::InsufficientCandidates {
                user: key,
                available,
                k,
            }
        }
        other => other,
    }
}

/// File name stem for a list of `model` at `lambda`.
pub fn list_stem(model: &str, lambda: f64) -> String {
    format!("{model}_{}_{lambda}", RowKind::for_lambda(lambda).as_str())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub command: String,
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub stages: Vec<StageTiming>,
}

/// Output files of one command, keyed by path relative to the output dir.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: BTreeMap<String, Vec<u8>>,
    pub rows: Vec<ReportRow>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), bytes.into());
    }

    fn seal(
        &mut self,
        command: &str,
        cfg: &ExperimentConfig,
        prep: &Prepared,
        timer: Timer,
    ) -> Result<()> {
        let mut inputs = BTreeMap::new();
        inputs.insert(
            cfg.input.path.display().to_string(),
            prep.input_hash.clone(),
        );
        for path in cfg.scorer.import.values() {
            let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
            inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        }
        let outputs = self
            .files
            .iter()
            .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
            .collect();
        let manifest = RunManifest {
            version: VERSION,
            command: command.to_owned(),
            config: cfg.to_toml(),
            inputs,
            outputs,
            stages: timer.stages,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        bytes.push(b'\n');
        self.add("manifest.json", bytes);
        Ok(())
    }
}

fn render_reports(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let name = cfg.dataset.name.as_str();
    for format in &cfg.output.formats {
        match format {
            ReportFormat::Csv => {
                let csv = render_csv(&out.rows)?;
                out.add("report.csv", csv);
            }
            ReportFormat::Json => {
                let json = render_json(name, &out.rows)?;
                out.add("report.json", json);
            }
            ReportFormat::Md => {
                let md = render_markdown(name, &out.rows);
                out.add("report.md", md);
            }
        }
    }
    let figure = render_figure_csv(name, &out.rows);
    out.add("figure.csv", figure);
    Ok(())
}

pub fn cmd_split(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let mut timer = Timer::default();
    let prep = prepare_timed(cfg, &mut timer)?;
    let mut out = Artifacts::default();
    let delimiter = cfg.input.format()?.delimiter as char;
    timer.time("write", || {
        for (name, set) in [
            ("train.tsv", &prep.split.train),
            ("valid.tsv", &prep.split.valid),
            ("test.tsv", &prep.split.test),
        ] {
            let mut buf = Vec::new();
            write_interactions(&mut buf, &prep.ds, set, delimiter)?;
            out.add(name, buf);
        }
        let mut buf = Vec::new();
        write_partition(&mut buf, &prep.ds, &prep.part)?;
        out.add("partition.tsv", buf);
        Ok(())
    })?;
    out.seal("split", cfg, &prep, timer)?;
    Ok(out)
}

pub fn cmd_score(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let mut timer = Timer::default();
    let prep = prepare_timed(cfg, &mut timer)?;
    let mut out = Artifacts::default();
    timer.time("score", || {
        for model in cfg.model_names() {
            let raw = score_model(cfg, &prep, &model)?;
            let mut buf = Vec::new();
            write_scores(&mut buf, &prep.ds, &raw)?;
            out.add(format!("scores/{model}.tsv"), buf);
        }
        Ok(())
    })?;
    out.seal("score", cfg, &prep, timer)?;
    Ok(out)
}

/// Sweep every model over the grid. Returns per-model sweep points along
/// with the masked input matrices.
fn sweep_models(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    timer: &mut Timer,
) -> Result<Vec<(String, ScoreMatrix, Vec<SweepPoint>)>> {
    let mut scored = Vec::new();
    timer.time("score", || {
        for model in cfg.model_names() {
            let raw = score_model(cfg, prep, &model)?;
            scored.push((model, rerank_input(cfg, prep, &raw)?));
        }
        Ok(())
    })?;
    timer.time("rerank", || {
        scored
            .into_iter()
            .map(|(model, r)| {
                let points =
                    lambda_sweep(&r, &prep.part, &cfg.rerank, &prep.judgments, &prep.train)
                        .map_err(|e| name_user(prep, e))?;
                Ok((model, r, points))
            })
            .collect()
    })
}

fn add_lists(
    out: &mut Artifacts,
    prep: &Prepared,
    cfg: &RerankConfig,
    model: &str,
    r: &ScoreMatrix,
    point: &SweepPoint,
) {
    let penalty = RerankConfig {
        lambda: point.lambda,
        ..cfg.clone()
    }
    .penalty(r.m());
    let adjusted = crate::rerank::adjusted_scores(r, &prep.part, penalty, 1);
    let text = render_lists(&prep.ds, &point.reranked.lists, r, &adjusted, &prep.part);
    out.add(
        format!("lists/{}.tsv", list_stem(model, point.lambda)),
        text,
    );
}

pub fn cmd_rerank(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let mut timer = Timer::default();
    let prep = prepare_timed(cfg, &mut timer)?;
    let mut out = Artifacts::default();
    for (model, r, points) in sweep_models(cfg, &prep, &mut timer)? {
        for point in &points {
            add_lists(&mut out, &prep, &cfg.rerank, &model, &r, point);
        }
    }
    out.seal("rerank", cfg, &prep, timer)?;
    Ok(out)
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let mut timer = Timer::default();
    let prep = prepare_timed(cfg, &mut timer)?;
    let mut out = Artifacts::default();
    for (model, r, points) in sweep_models(cfg, &prep, &mut timer)? {
        for point in &points {
            add_lists(&mut out, &prep, &cfg.rerank, &model, &r, point);
            out.rows.push(ReportRow {
                model: model.clone(),
                kind: RowKind::for_lambda(point.lambda),
                lambda: point.lambda,
                report: point.report.clone(),
            });
        }
    }
    timer.time("report", || render_reports(cfg, &mut out))?;
    out.seal("run", cfg, &prep, timer)?;
    Ok(out)
}

/// Evaluate existing list files. Files named `<model>_<N|P>_<lambda>.tsv`
/// keep that labelling; other files are reported as P rows with λ = NaN.
pub fn cmd_evaluate(cfg: &ExperimentConfig, list_files: &[PathBuf]) -> Result<Artifacts> {
    cfg.validate()?;
    if list_files.is_empty() {
        return Err(Error::Config(
            "evaluate needs at least one list file".into(),
        ));
    }
    let mut timer = Timer::default();
    let prep = prepare_timed(cfg, &mut timer)?;
    let mut out = Artifacts::default();
    timer.time("evaluate", || {
        for path in list_files {
            let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
            let lists = parse_lists(bytes.as_slice(), &prep.ds).map_err(|e| e.in_file(path))?;
            let report = evaluate_all(&lists, &prep.judgments, &prep.train, &prep.part)
                .map_err(|e| e.in_file(path))?;
            let (model, kind, lambda) = label_from_path(path);
            out.rows.push(ReportRow {
                model,
                kind,
                lambda,
                report,
            });
        }
        Ok(())
    })?;
    timer.time("report", || render_reports(cfg, &mut out))?;
    out.seal("evaluate", cfg, &prep, timer)?;
    Ok(out)
}

fn label_from_path(path: &Path) -> (String, RowKind, f64) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut parts = stem.rsplitn(3, '_');
    if let (Some(lambda), Some(kind), Some(model)) = (parts.next(), parts.next(), parts.next()) {
        if let Ok(lambda) = lambda.parse::<f64>() {
            match kind {
                "N" => return (model.to_owned(), RowKind::N, lambda),
                "P" => return (model.to_owned(), RowKind::P, lambda),
                _ => {}
            }
        }
    }
    (stem, RowKind::P, f64::NAN)
}

/// Publish artifacts into `dir`: everything is staged in a temporary
/// directory inside `dir` and renamed into place only after all writes
/// succeed.
pub fn commit(dir: &Path, artifacts: &Artifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(dir)
        .map_err(|e| Error::from(e).in_file(dir))?;
    for (name, bytes) in &artifacts.files {
        let path = staging.path().join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).map_err(|e| Error::from(e).in_file(&path))?;
    }
    for name in artifacts.files.keys() {
        let target = dir.join(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::rename(staging.path().join(name), &target)
            .map_err(|e| Error::from(e).in_file(&target))?;
    }
    Ok(())
}
