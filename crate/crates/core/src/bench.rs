//! Experiment orchestration: run a parser over datasets, persist predictions
//! and metrics, write a replayable manifest, and render comparison tables.
//!
//! Output layout for a run directory:
//!
//! ```text
//! <out>/manifest.json
//! <out>/report.txt            table rendering
//! <out>/report.csv
//! <out>/<dataset>/predictions.csv
//! <out>/<dataset>/metrics.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{dataset_path, load_dataset, Dataset, BENCHMARK_DATASETS};
use crate::drain::{drain_parse, DrainConfig, DrainError};
use crate::extract::{extract_delimited, ExtractionStatus};
use crate::llm::{
    cached_complete, BackendConfig, BackendKind, CacheStats, EchoTable, LlmClient, LlmError,
    ResponseCache,
};
use crate::metrics::{evaluate, MetricsReport, Prediction};
use crate::model::{LogRecord, Template};
use crate::prompt::{render_prompt, select_demonstrations, PromptVariant};

const BUILTIN_DRAIN_CONFIG: &str = include_str!("../config/drain.conf");

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Drain(#[from] DrainError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("nothing to report")]
    EmptyInput,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Llm,
    Drain,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Method::Llm),
            "drain" => Ok(Method::Drain),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_names: Vec<String>,
    pub data_dir: PathBuf,
    pub method: Method,
    pub variant: PromptVariant,
    pub shots: usize,
    pub seed: u64,
    pub backend: BackendConfig,
    /// Defaults to `<output_dir>/cache.jsonl`.
    pub cache_path: Option<PathBuf>,
    /// Defaults to the bundled per-dataset settings.
    pub drain_config: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Expands `all` to the sixteen benchmark datasets.
    pub fn expand_datasets(names: &[String]) -> Vec<String> {
        if names.iter().any(|n| n.eq_ignore_ascii_case("all")) {
            BENCHMARK_DATASETS.iter().map(|s| s.to_string()).collect()
        } else {
            names.to_vec()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.dataset_names.is_empty() {
            return bad("no datasets selected".into());
        }
        if self.method == Method::Drain {
            return Ok(());
        }
        if ![0, 1, 2, 4].contains(&self.shots) {
            return bad(format!(
                "shots must be one of 0, 1, 2, 4 (got {})",
                self.shots
            ));
        }
        match (self.shots > 0, self.variant.is_few_shot()) {
            (true, false) => bad(format!(
                "{} is zero-shot; use pt2 with --shots {}",
                self.variant, self.shots
            )),
            (false, true) => bad("pt2 needs --shots 1, 2 or 4".into()),
            _ => self.backend.validate().map_err(BenchError::from),
        }
    }

    fn cache_file(&self) -> PathBuf {
        self.cache_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache.jsonl"))
    }
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub line_id: u64,
    pub content: String,
    pub truth_template: String,
    pub predicted_template: String,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStatus {
    pub name: String,
    pub ok: bool,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_id: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub config: ExperimentConfig,
    pub model_id: String,
    pub cache_path: Option<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub cache: Option<CacheStats>,
    pub backend_calls: usize,
    pub execution: String,
    pub datasets: Vec<DatasetStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_of: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<MetricsReport>,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn failed(&self) -> impl Iterator<Item = &DatasetStatus> {
        self.manifest.datasets.iter().filter(|d| !d.ok)
    }

    pub fn fully_succeeded(&self) -> bool {
        self.failed().next().is_none()
    }

    /// Report rows in dataset order, failed datasets marked missing.
    pub fn rows(&self) -> Vec<ReportRow> {
        report_rows(&self.manifest.datasets, &self.reports)
    }
}

struct DatasetFailure {
    line_id: Option<u64>,
    message: String,
}

impl<E: std::fmt::Display> From<(Option<u64>, E)> for DatasetFailure {
    fn from((line_id, e): (Option<u64>, E)) -> Self {
        DatasetFailure {
            line_id,
            message: e.to_string(),
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

enum ClientSource {
    Shared(Box<LlmClient>),
    EchoPerDataset,
}

fn predict_llm(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    client: &LlmClient,
    cache: &ResponseCache,
) -> Result<Vec<PredictionRow>, DatasetFailure> {
    let demos = select_demonstrations(ds, cfg.shots, cfg.seed).map_err(|e| (None, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.backend.max_in_flight)
        .build()
        .map_err(|e| (None, e))?;
    pool.install(|| {
        ds.records()
            .par_iter()
            .map(|r| {
                let prompt = render_prompt(cfg.variant, &demos, &r.content)
                    .map_err(|e| (Some(r.line_id), e))?;
                let resp =
                    cached_complete(&prompt, client, cache).map_err(|e| (Some(r.line_id), e))?;
                let outcome = extract_delimited(&resp.text);
                Ok(row(r, &outcome.prediction(), outcome.status.as_str()))
            })
            .collect()
    })
}

fn predict_drain(ds: &Dataset, drain: &DrainConfig) -> Result<Vec<PredictionRow>, DatasetFailure> {
    let params = drain.params_for(&ds.name);
    let assignment = drain_parse(ds.records(), &params).map_err(|e| (None, e))?;
    Ok(ds
        .records()
        .iter()
        .map(|r| {
            let t = assignment
                .template_of(r.line_id)
                .expect("every record is assigned");
            row(r, t, "clustered")
        })
        .collect())
}

fn row(r: &LogRecord, predicted: &Template, status: &str) -> PredictionRow {
    PredictionRow {
        line_id: r.line_id,
        content: r.content.clone(),
        truth_template: r.truth_template.raw().to_owned(),
        predicted_template: predicted.raw().to_owned(),
        status: status.to_owned(),
    }
}

fn rows_to_predictions(rows: &[PredictionRow]) -> Vec<Prediction> {
    rows.iter()
        .map(|r| Prediction {
            line_id: r.line_id,
            template: prediction_template(&r.predicted_template, &r.status),
        })
        .collect()
}

fn prediction_template(text: &str, status: &str) -> Template {
    if status == ExtractionStatus::Refusal.as_str() {
        Template::refused()
    } else {
        Template::parse_canonical(text)
    }
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a predictions file. Only `line_id` and `predicted_template` are
/// required; a `status` of `refusal` maps to the `<REFUSED>` sentinel.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, BenchError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("line_id").ok_or_else(|| io_err(path, "missing column line_id"))?;
    let pred_col = col("predicted_template")
        .ok_or_else(|| io_err(path, "missing column predicted_template"))?;
    let status_col = col("status");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line_id = rec[id_col]
            .trim()
            .parse()
            .map_err(|e| io_err(path, format!("row {}: line_id: {e}", i + 1)))?;
        let status = status_col.map(|c| &rec[c]).unwrap_or("");
        out.push(Prediction {
            line_id,
            template: prediction_template(&rec[pred_col], status),
        });
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn run_dataset(
    cfg: &ExperimentConfig,
    name: &str,
    source: &ClientSource,
    cache: Option<&ResponseCache>,
    drain: Option<&DrainConfig>,
    calls: &mut usize,
) -> Result<MetricsReport, DatasetFailure> {
    let ds = load_dataset(&dataset_path(&cfg.data_dir, name), name).map_err(|e| (None, e))?;
    let rows = match cfg.method {
        Method::Drain => predict_drain(&ds, drain.expect("drain config loaded"))?,
        Method::Llm => {
            let cache = cache.expect("cache opened for llm runs");
            match source {
                ClientSource::Shared(client) => predict_llm(cfg, &ds, client, cache)?,
                ClientSource::EchoPerDataset => {
                    let client =
                        LlmClient::echo(&cfg.backend.model_id, EchoTable::from_dataset(&ds));
                    let rows = predict_llm(cfg, &ds, &client, cache);
                    *calls += client.backend_calls();
                    rows?
                }
            }
        }
    };
    let report = evaluate(&rows_to_predictions(&rows), &ds, false).map_err(|e| (None, e))?;
    let dir = cfg.output_dir.join(name);
    fs::create_dir_all(&dir).map_err(|e| (None, e))?;
    write_predictions(&dir.join("predictions.csv"), &rows).map_err(|e| (None, e))?;
    write_json(&dir.join("metrics.json"), &report).map_err(|e| (None, e))?;
    Ok(report)
}

fn execute(
    cfg: &ExperimentConfig,
    source: ClientSource,
    replay_of: Option<PathBuf>,
) -> Result<RunOutcome, BenchError> {
    let started_unix = unix_now();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;

    let (cache, drain) = match cfg.method {
        Method::Llm => (Some(ResponseCache::open(&cfg.cache_file())?), None),
        Method::Drain => {
            let drain = match &cfg.drain_config {
                Some(p) => DrainConfig::load(p)?,
                None => DrainConfig::parse(BUILTIN_DRAIN_CONFIG, "builtin drain.conf")?,
            };
            (None, Some(drain))
        }
    };

    let mut calls = 0;
    let mut reports = Vec::new();
    let mut statuses = Vec::new();
    for name in &cfg.dataset_names {
        match run_dataset(
            cfg,
            name,
            &source,
            cache.as_ref(),
            drain.as_ref(),
            &mut calls,
        ) {
            Ok(report) => {
                statuses.push(DatasetStatus {
                    name: name.clone(),
                    ok: true,
                    n: report.n,
                    error: None,
                    line_id: None,
                });
                reports.push(report);
            }
            Err(f) => statuses.push(DatasetStatus {
                name: name.clone(),
                ok: false,
                n: 0,
                error: Some(f.message),
                line_id: f.line_id,
            }),
        }
    }
    if let ClientSource::Shared(client) = &source {
        calls += client.backend_calls();
    }

    let rows = report_rows(&statuses, &reports);
    if !rows.is_empty() {
        for (format, file) in [
            (ReportFormat::Table, "report.txt"),
            (ReportFormat::Csv, "report.csv"),
        ] {
            let path = cfg.output_dir.join(file);
            let text = render_rows(&rows, format)?;
            fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        }
    }

    let manifest = RunManifest {
        tool: format!("logbench {}", env!("CARGO_PKG_VERSION")),
        config: cfg.clone(),
        model_id: cfg.backend.model_id.clone(),
        cache_path: cache.as_ref().map(|c| c.path().to_owned()),
        started_unix,
        finished_unix: unix_now(),
        cache: cache.as_ref().map(ResponseCache::stats),
        backend_calls: calls,
        execution: format!(
            "datasets sequential in listed order; up to {} concurrent requests per dataset; \
             predictions written in dataset line order",
            cfg.backend.max_in_flight
        ),
        datasets: statuses,
        replay_of,
    };
    write_json(&cfg.output_dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome { reports, manifest })
}

/// Runs `cfg` end to end. Configuration problems (including a missing API
/// key for the remote backend) fail before any dataset is touched; a failure
/// inside one dataset is recorded in the manifest and the run moves on.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, BenchError> {
    cfg.validate()?;
    let source = match (cfg.method, cfg.backend.kind) {
        (Method::Drain, _) => {
            ClientSource::Shared(Box::new(LlmClient::replay(&cfg.backend.model_id)))
        }
        (Method::Llm, BackendKind::MockEcho) => ClientSource::EchoPerDataset,
        (Method::Llm, _) => ClientSource::Shared(Box::new(LlmClient::from_config(&cfg.backend)?)),
    };
    execute(cfg, source, None)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, BenchError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Re-runs a recorded experiment into `output_dir` serving every prompt from
/// the recorded cache. Any prompt missing from the cache fails its dataset;
/// the backend is never contacted.
pub fn replay(manifest_path: &Path, output_dir: &Path) -> Result<RunOutcome, BenchError> {
    let recorded = read_manifest(manifest_path)?;
    let mut cfg = recorded.config.clone();
    cfg.output_dir = output_dir.to_owned();
    if cfg.method == Method::Llm {
        let cache = recorded
            .cache_path
            .clone()
            .ok_or_else(|| BenchError::Config("manifest records no cache".into()))?;
        cfg.cache_path = Some(cache);
    }
    cfg.validate()?;
    execute(
        &cfg,
        ClientSource::Shared(Box::new(LlmClient::replay(&cfg.backend.model_id))),
        Some(manifest_path.to_owned()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// A report line: metrics, or a dataset that failed.
#[derive(Clone, Debug, PartialEq)]
pub enum ReportRow {
    Scored(MetricsReport),
    Missing(String),
}

fn report_rows(statuses: &[DatasetStatus], reports: &[MetricsReport]) -> Vec<ReportRow> {
    let mut scored = reports.iter();
    statuses
        .iter()
        .map(|s| {
            if s.ok {
                ReportRow::Scored(scored.next().expect("one report per ok dataset").clone())
            } else {
                ReportRow::Missing(s.name.clone())
            }
        })
        .collect()
}

/// Renders per-dataset rows plus an unweighted Average row.
pub fn render_report(
    reports: &[MetricsReport],
    format: ReportFormat,
) -> Result<String, BenchError> {
    let rows: Vec<ReportRow> = reports.iter().cloned().map(ReportRow::Scored).collect();
    render_rows(&rows, format)
}

pub fn render_rows(rows: &[ReportRow], format: ReportFormat) -> Result<String, BenchError> {
    let scored: Vec<&MetricsReport> = rows
        .iter()
        .filter_map(|r| match r {
            ReportRow::Scored(m) => Some(m),
            ReportRow::Missing(_) => None,
        })
        .collect();
    if rows.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mean = |f: fn(&MetricsReport) -> f64| {
        if scored.is_empty() {
            None
        } else {
            Some(scored.iter().map(|m| f(m)).sum::<f64>() / scored.len() as f64)
        }
    };
    let avg = (mean(|m| m.ga), mean(|m| m.mla), mean(|m| m.ed));
    let total_n: usize = scored.iter().map(|m| m.n).sum();

    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("dataset,n,ga,mla,ed\n");
            for r in rows {
                match r {
                    ReportRow::Scored(m) => {
                        writeln!(out, "{},{},{},{},{}", m.dataset, m.n, m.ga, m.mla, m.ed).unwrap()
                    }
                    ReportRow::Missing(name) => writeln!(out, "{name},,,,").unwrap(),
                }
            }
            match avg {
                (Some(ga), Some(mla), Some(ed)) => {
                    writeln!(out, "Average,{total_n},{ga},{mla},{ed}").unwrap()
                }
                _ => out.push_str("Average,,,,\n"),
            }
        }
        ReportFormat::Table => {
            let width = rows
                .iter()
                .map(|r| match r {
                    ReportRow::Scored(m) => m.dataset.len(),
                    ReportRow::Missing(n) => n.len(),
                })
                .chain(["Dataset".len(), "Average".len()])
                .max()
                .unwrap_or(7);
            writeln!(
                out,
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>8}",
                "Dataset", "n", "GA", "MLA", "ED"
            )
            .unwrap();
            writeln!(out, "{}", "-".repeat(width + 36)).unwrap();
            for r in rows {
                match r {
                    ReportRow::Scored(m) => writeln!(
                        out,
                        "{:<width$}  {:>6}  {:>6.3}  {:>6.3}  {:>8.3}",
                        m.dataset, m.n, m.ga, m.mla, m.ed
                    )
                    .unwrap(),
                    ReportRow::Missing(name) => writeln!(
                        out,
                        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>8}",
                        name, "---", "---", "---", "---"
                    )
                    .unwrap(),
                }
            }
            writeln!(out, "{}", "-".repeat(width + 36)).unwrap();
            match avg {
                (Some(ga), Some(mla), Some(ed)) => writeln!(
                    out,
                    "{:<width$}  {:>6}  {:>6.3}  {:>6.3}  {:>8.3}",
                    "Average", total_n, ga, mla, ed
                )
                .unwrap(),
                _ => writeln!(
                    out,
                    "{:<width$}  {:>6}  {:>6}  {:>6}  {:>8}",
                    "Average", "---", "---", "---", "---"
                )
                .unwrap(),
            }
            out.push_str("ED is the mean edit distance to the ground truth; lower is better.\n");
        }
    }
    Ok(out)
}

/// Rebuilds report rows from a run directory: manifest order when present,
/// otherwise every `<dataset>/metrics.json` in name order.
pub fn collect_rows(run_dir: &Path) -> Result<Vec<ReportRow>, BenchError> {
    let manifest_path = run_dir.join("manifest.json");
    let read_metrics = |name: &str| -> Result<MetricsReport, BenchError> {
        let path = run_dir.join(name).join("metrics.json");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(&path, e))
    };
    if manifest_path.exists() {
        let manifest = read_manifest(&manifest_path)?;
        return manifest
            .datasets
            .iter()
            .map(|s| {
                if s.ok {
                    read_metrics(&s.name).map(ReportRow::Scored)
                } else {
                    Ok(ReportRow::Missing(s.name.clone()))
                }
            })
            .collect();
    }
    let mut names: Vec<String> = fs::read_dir(run_dir)
        .map_err(|e| io_err(run_dir, e))?
        .filter_map(Result::ok)
        .filter(|e| e.path().join("metrics.json").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
        .iter()
        .map(|n| read_metrics(n).map(ReportRow::Scored))
        .collect()
}
