//! Samples, datasets, and the delimited-text dataset file.
//!
//! File layout: a header `feature_0,...,feature_{d-1},task_pred,ground_truth,cluster_id`
//! followed by one row per sample. Floats are written in shortest round-trip
//! form, so save/load is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::correctness_label;
use crate::model::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    #[default]
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub task_pred: f64,
    pub ground_truth: f64,
    pub cluster_id: usize,
    /// Correctness label C, derived from `task_pred` and `ground_truth`.
    pub correct: bool,
}

impl Sample {
    pub fn new(input: Vec<f64>, task_pred: f64, ground_truth: f64, cluster_id: usize, mode: TaskMode) -> Self {
        Self {
            input,
            task_pred,
            ground_truth,
            cluster_id,
            correct: correctness_label(task_pred, ground_truth, mode),
        }
    }

    pub fn label(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub mode: TaskMode,
    pub samples: Vec<Sample>,
}

/// Exact counts over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_samples: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub positive_rate: f64,
    /// `(cluster_id, count)` in ascending id order.
    pub cluster_counts: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn new(mode: TaskMode, samples: Vec<Sample>) -> Self {
        Self { mode, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.input.len())
    }

    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.correct).collect()
    }

    /// Batch over the given sample indices, with C as the target.
    pub fn batch(&self, indices: &[usize]) -> Batch<'_> {
        Batch::new(
            indices.iter().map(|&i| self.samples[i].input.as_slice()).collect(),
            indices.iter().map(|&i| self.samples[i].label()).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(self.mode, indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    pub fn describe(&self) -> Result<DatasetSummary> {
        if self.is_empty() {
            return Err(Error::config("cannot describe an empty dataset"));
        }
        let n_correct = self.samples.iter().filter(|s| s.correct).count();
        let mut counts = std::collections::BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.cluster_id).or_insert(0usize) += 1;
        }
        Ok(DatasetSummary {
            n_samples: self.len(),
            n_correct,
            n_incorrect: self.len() - n_correct,
            positive_rate: n_correct as f64 / self.len() as f64,
            cluster_counts: counts.into_iter().collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let d = self.input_dim().unwrap_or(0);
        let mut out = String::new();
        for j in 0..d {
            let _ = write!(out, "feature_{j},");
        }
        out.push_str("task_pred,ground_truth,cluster_id\n");
        for s in &self.samples {
            for x in &s.input {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{},{},{}", s.task_pred, s.ground_truth, s.cluster_id);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str, mode: TaskMode, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            what: "dataset",
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 {
            return Err(parse_err(1, format!("expected at least 4 columns, found {}", cols.len())));
        }
        let d = cols.len() - 3;
        for (j, c) in cols[..d].iter().enumerate() {
            if *c != format!("feature_{j}") {
                return Err(parse_err(1, format!("column {j} should be feature_{j}, found `{c}`")));
            }
        }
        if cols[d..] != ["task_pred", "ground_truth", "cluster_id"] {
            return Err(parse_err(1, "trailing columns must be task_pred,ground_truth,cluster_id".into()));
        }

        let mut samples = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(parse_err(
                    lineno,
                    format!("expected {} columns, found {}", cols.len(), fields.len()),
                ));
            }
            let mut values = Vec::with_capacity(d + 2);
            for f in &fields[..d + 2] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("`{f}` is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, format!("non-finite value `{f}`")));
                }
                values.push(v);
            }
            let cluster_id: usize = fields[d + 2]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad cluster id `{}`", fields[d + 2])))?;
            let gt = values.pop().expect("d + 2 values");
            let pred = values.pop().expect("d + 1 values");
            samples.push(Sample::new(values, pred, gt, cluster_id, mode));
        }
        Ok(Dataset::new(mode, samples))
    }

    pub fn load(path: &Path, mode: TaskMode) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, mode, path)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
