//! Command implementations behind the `metaconf` binary.
//!
//! Every command returns a summary value; printing and exit codes live in
//! `main.rs`. Relative output paths are resolved against `$METACONF_OUT_ROOT`
//! when that variable is set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, GradCheckMode};
use crate::data::{file_hash, Dataset, DatasetSummary};
use crate::datagen::{generate, BenchmarkMetadata};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::trainer::{self, GradCheckCase, Quadratic, TrainHistory, Variant};

pub const OUT_ROOT_ENV: &str = "METACONF_OUT_ROOT";
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Joins a relative `path` onto `$METACONF_OUT_ROOT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

/// `data/bench.csv` -> `data/bench.test.csv`.
pub fn test_path_for(train_path: &Path) -> PathBuf {
    sibling(train_path, "test.csv")
}

/// `data/bench.csv` -> `data/bench.meta.json`.
pub fn metadata_path_for(train_path: &Path) -> PathBuf {
    sibling(train_path, "meta.json")
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenSummary {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub metadata_path: PathBuf,
    pub train: DatasetSummary,
    pub test: DatasetSummary,
    pub metadata: BenchmarkMetadata,
}

/// Writes the training set to `out`, the test set and metadata next to it.
pub fn cmd_datagen(config: &ExperimentConfig, out: &Path) -> Result<DatagenSummary> {
    let bench = generate(&config.benchmark)?;
    let out = resolve_out(out);
    let test_path = test_path_for(&out);
    let metadata_path = metadata_path_for(&out);
    write(&out, bench.train.to_csv())?;
    write(&test_path, bench.test.to_csv())?;
    write(&metadata_path, to_json(&bench.metadata)?)?;
    Ok(DatagenSummary {
        train_path: out,
        test_path,
        metadata_path,
        train: bench.train.describe()?,
        test: bench.test.describe()?,
        metadata: bench.metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub dataset: PathBuf,
    pub dataset_sha256: String,
    pub eval_dataset: PathBuf,
    pub eval_dataset_sha256: String,
    pub code_version: String,
    /// Unix seconds; omitted from the copy embedded in the report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_at: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<u64>,
    /// File names relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub metrics: MetricReport,
    pub history_path: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub report: RunReport,
    pub history: TrainHistory,
}

/// Trains on `data`, evaluates on its sibling test file (or on `data` itself
/// when there is none) and writes checkpoint, history, report and manifest.
pub fn cmd_train(config: &ExperimentConfig, data: &Path, out_dir: &Path) -> Result<TrainSummary> {
    let started_at = unix_now();
    let mode = config.benchmark.mode;
    let train_set = Dataset::load(data, mode)?;
    let test_path = test_path_for(data);
    let eval_path = if test_path.exists() { test_path } else { data.to_path_buf() };
    let test_set = Dataset::load(&eval_path, mode)?;
    let input_dim = train_set.input_dim().ok_or_else(|| Error::config("empty training set"))?;
    let arch = config.model.architecture(input_dim)?;

    let out = trainer::train(&train_set, &arch, &config.train)?;
    let metrics = evaluate(&out.params, &arch, &test_set)?;

    let out_dir = resolve_out(out_dir);
    let checkpoint = Checkpoint::new(arch, out.params)?;
    let mut manifest = RunManifest {
        config: config.clone(),
        dataset: data.to_path_buf(),
        dataset_sha256: file_hash(data)?,
        eval_dataset_sha256: file_hash(&eval_path)?,
        eval_dataset: eval_path,
        code_version: CODE_VERSION.to_string(),
        started_at: None,
        finished_at: None,
        artifacts: [CHECKPOINT_FILE, HISTORY_FILE, REPORT_FILE, MANIFEST_FILE].map(String::from).to_vec(),
    };
    let report = RunReport {
        manifest: manifest.clone(),
        metrics,
        history_path: Some(HISTORY_FILE.to_string()),
    };
    write(&out_dir.join(CHECKPOINT_FILE), checkpoint.to_text())?;
    write(&out_dir.join(HISTORY_FILE), out.history.to_jsonl()?)?;
    write(&out_dir.join(REPORT_FILE), to_json(&report)?)?;
    manifest.started_at = Some(started_at);
    manifest.finished_at = Some(unix_now());
    write(&out_dir.join(MANIFEST_FILE), to_json(&manifest)?)?;
    Ok(TrainSummary {
        out_dir,
        report,
        history: out.history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub dataset: PathBuf,
    pub dataset_sha256: String,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifest: EvalManifest,
    pub metrics: MetricReport,
    pub history_path: Option<String>,
}

/// Scores `data` with a checkpoint; writes the report to `out` when given.
pub fn cmd_eval(config: &ExperimentConfig, checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let dataset = Dataset::load(data, config.benchmark.mode)?;
    let metrics = evaluate(&ck.params, &ck.arch, &dataset)?;
    let report = EvalReport {
        manifest: EvalManifest {
            checkpoint: checkpoint.to_path_buf(),
            checkpoint_sha256: file_hash(checkpoint)?,
            dataset: data.to_path_buf(),
            dataset_sha256: file_hash(data)?,
            code_version: CODE_VERSION.to_string(),
        },
        metrics,
        history_path: None,
    };
    if let Some(out) = out {
        write(&resolve_out(out), to_json(&report)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub report_path: PathBuf,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Seeds for which the metric was defined.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: Variant,
    pub metrics: BTreeMap<String, MetricCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub wins: usize,
    pub comparisons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<TableRow>,
    pub runs: Vec<RunResult>,
    /// Per metric: seeds on which `full` is better than `joint`.
    pub full_vs_joint: Option<BTreeMap<String, WinRate>>,
    pub table_path: PathBuf,
}

/// Whether a larger value of the metric is better.
pub fn higher_is_better(metric: &str) -> bool {
    matches!(metric, "auroc" | "aupr_error" | "aupr_success")
}

fn cell(values: &[f64]) -> MetricCell {
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let std = mean.filter(|_| n > 1).map(|m| {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    MetricCell { mean, std, n }
}

fn summarise(variants: &[Variant], runs: &[RunResult]) -> Vec<TableRow> {
    variants
        .iter()
        .map(|&variant| {
            let metrics = MetricReport::METRIC_NAMES
                .iter()
                .map(|&name| {
                    let values: Vec<f64> = runs
                        .iter()
                        .filter(|r| r.variant == variant)
                        .filter_map(|r| r.metrics.get(name))
                        .collect();
                    (name.to_string(), cell(&values))
                })
                .collect();
            TableRow { variant, metrics }
        })
        .collect()
}

fn win_rates(runs: &[RunResult], a: Variant, b: Variant) -> BTreeMap<String, WinRate> {
    MetricReport::METRIC_NAMES
        .iter()
        .map(|&name| {
            let mut rate = WinRate { wins: 0, comparisons: 0 };
            for ra in runs.iter().filter(|r| r.variant == a) {
                let rb = runs.iter().find(|r| r.variant == b && r.seed == ra.seed);
                if let (Some(x), Some(y)) = (ra.metrics.get(name), rb.and_then(|r| r.metrics.get(name))) {
                    rate.comparisons += 1;
                    let better = if higher_is_better(name) { x > y } else { x < y };
                    rate.wins += usize::from(better);
                }
            }
            (name.to_string(), rate)
        })
        .collect()
}

/// The comparison table as CSV: one row per variant, `mean` and `std` columns per metric.
pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("variant");
    for name in MetricReport::METRIC_NAMES {
        let _ = write!(out, ",{name}_mean,{name}_std");
    }
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
    for row in rows {
        out.push_str(row.variant.name());
        for name in MetricReport::METRIC_NAMES {
            let c = &row.metrics[name];
            let _ = write!(out, ",{},{}", fmt(c.mean), fmt(c.std));
        }
        out.push('\n');
    }
    out
}

fn run_one(
    config: &ExperimentConfig,
    data: Option<&Path>,
    seed: u64,
    variant: Variant,
    out_dir: &Path,
) -> Result<RunResult> {
    let mut cfg = config.with_seed(seed);
    cfg.train.variant = variant;
    let run_dir = out_dir.join("runs").join(variant.name()).join(format!("seed_{seed}"));
    let data_path = data.map_or_else(|| seed_data_path(out_dir, seed), Path::to_path_buf);
    let summary = cmd_train(&cfg, &data_path, &run_dir)?;
    Ok(RunResult {
        variant,
        seed,
        report_path: summary.out_dir.join(REPORT_FILE),
        metrics: summary.report.metrics,
    })
}

/// Trains and evaluates every `(seed, variant)` pair, in parallel. Without
/// `data`, each seed gets its own benchmark generated from the config.
pub fn cmd_compare(
    config: &ExperimentConfig,
    data: Option<&Path>,
    seeds: &[u64],
    variants: &[Variant],
    out_dir: &Path,
) -> Result<Comparison> {
    if seeds.len() < 2 {
        return Err(Error::config("compare needs at least two seeds"));
    }
    if variants.is_empty() {
        return Err(Error::config("compare needs at least one variant"));
    }
    let out_dir = resolve_out(out_dir);
    // datasets first, so concurrent runs never race on generating them
    if data.is_none() {
        seeds
            .par_iter()
            .map(|&s| run_data(config, s, &out_dir))
            .collect::<Result<Vec<()>>>()?;
    }
    let jobs: Vec<(u64, Variant)> = seeds
        .iter()
        .flat_map(|&s| variants.iter().map(move |&v| (s, v)))
        .collect();
    let results: Vec<Result<RunResult>> = jobs
        .par_iter()
        .map(|&(s, v)| run_one(config, data, s, v, &out_dir))
        .collect();

    let mut runs = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    if let Some(e) = failure {
        let partial = out_dir.join("partial_results.json");
        write(&partial, to_json(&runs)?)?;
        let msg = format!("{e}; partial results in {}", partial.display());
        return Err(match e {
            Error::Numerical(_) => Error::numerical(msg),
            _ => Error::config(msg),
        });
    }

    let rows = summarise(variants, &runs);
    let full_vs_joint = (variants.contains(&Variant::Full) && variants.contains(&Variant::Joint))
        .then(|| win_rates(&runs, Variant::Full, Variant::Joint));
    let table_path = out_dir.join("comparison.csv");
    let comparison = Comparison {
        seeds: seeds.to_vec(),
        rows,
        runs,
        full_vs_joint,
        table_path: table_path.clone(),
    };
    write(&table_path, table_csv(&comparison.rows))?;
    write(&out_dir.join("comparison.json"), to_json(&comparison)?)?;
    Ok(comparison)
}

fn seed_data_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join("data").join(format!("seed_{seed}.csv"))
}

fn run_data(config: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let path = seed_data_path(out_dir, seed);
    let bench = generate(&config.with_seed(seed).benchmark)?;
    write(&path, bench.train.to_csv())?;
    write(&test_path_for(&path), bench.test.to_csv())?;
    write(&metadata_path_for(&path), to_json(&bench.metadata)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub mode: GradCheckMode,
    pub tolerance: f64,
    pub case_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Runs the seeded finite-difference suite described by `config.gradcheck`.
pub fn cmd_gradcheck(config: &ExperimentConfig) -> Result<GradCheckSummary> {
    let gc = &config.gradcheck;
    let case_errors = match gc.mode {
        GradCheckMode::Quadratic => {
            let q = Quadratic { a: 1.0, b: 1.0, dim: 1 };
            let alphas = GradCheckCase::ALPHAS;
            (0..gc.cases)
                .map(|i| {
                    let phi = [0.5 + i as f64 * 0.25];
                    let alpha = alphas[i % alphas.len()];
                    let g = trainer::meta_gradient(&q, &phi, alpha, true)?.grad[0];
                    let exact = q.closed_form_meta_gradient(&phi, alpha)[0];
                    Ok((g - exact).abs() / exact.abs())
                })
                .collect::<Result<Vec<f64>>>()?
        }
        mode => {
            let second_order = mode == GradCheckMode::SecondOrder;
            (0..gc.cases)
                .into_par_iter()
                .map(|i| Ok(GradCheckCase::random(gc.seed, i).check(gc.step, second_order)?.max_rel_error))
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let max_rel_error = case_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckSummary {
        mode: gc.mode,
        tolerance: gc.tolerance,
        passed: max_rel_error < gc.tolerance,
        case_errors,
        max_rel_error,
    })
}
