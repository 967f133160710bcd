//! Correctness labelling and the evaluation metrics for a confidence estimator.
//!
//! Ranking metrics take `labels[i] == true` to mean the task model's prediction
//! was correct (C = 1) and `scores[i]` to be the estimator's confidence in that.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskMode};
use crate::error::{Error, Result};
use crate::model::{self, Architecture};

/// Relative-error threshold below which a regression prediction counts as correct.
pub const RELATIVE_ERROR_THRESHOLD: f64 = 0.25;

/// C = 1 iff the task prediction is correct.
///
/// Regression: `|pred - gt| / |gt| < 0.25` (strict). With `gt == 0` the
/// relative error is undefined and only an exact match counts as correct.
/// Classification: class ids must be equal.
pub fn correctness_label(task_pred: f64, ground_truth: f64, mode: TaskMode) -> bool {
    match mode {
        TaskMode::Classification => task_pred == ground_truth,
        TaskMode::Regression => {
            if ground_truth == 0.0 {
                task_pred == 0.0
            } else {
                (task_pred - ground_truth).abs() / ground_truth.abs() < RELATIVE_ERROR_THRESHOLD
            }
        }
    }
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numerical("NaN score"));
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn descending_tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outranks a random negative, ties counting ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auroc"));
    }
    // Mann-Whitney U from mid-ranks (1-based, ascending).
    let groups = descending_tie_groups(scores);
    let n = scores.len();
    let mut seen = 0usize;
    let mut pos_rank_sum = 0.0;
    for g in &groups {
        // descending positions seen..seen+len map to ascending ranks n-seen-len+1 ..= n-seen
        let lo = (n - seen - g.len() + 1) as f64;
        let hi = (n - seen) as f64;
        let mid = 0.5 * (lo + hi);
        pos_rank_sum += mid * g.iter().filter(|&&i| labels[i]).count() as f64;
        seen += g.len();
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Non-interpolated area under the precision-recall curve for `positive_class`.
///
/// For `positive_class == false` (AUPR-Error) the scores are negated so the
/// least confident samples rank first. Tied scores form a single threshold.
pub fn aupr(scores: &[f64], labels: &[bool], positive_class: bool) -> Result<f64> {
    check_lengths(scores, labels)?;
    let ranked: Vec<f64> = if positive_class {
        scores.to_vec()
    } else {
        scores.iter().map(|s| -s).collect()
    };
    let is_pos = |i: usize| labels[i] == positive_class;
    let n_pos = (0..labels.len()).filter(|&i| is_pos(i)).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(if positive_class {
            "aupr_success"
        } else {
            "aupr_error"
        }));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for g in descending_tie_groups(&ranked) {
        for &i in &g {
            if is_pos(i) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// False-positive rate at the highest threshold whose true-positive rate is at
/// least 95%. Positives are C = 1; a sample is accepted when its score is at
/// or above the threshold.
pub fn fpr_at_95_tpr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("fpr_at_95_tpr"));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in descending_tie_groups(scores) {
        for &i in &g {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        // tp / n_pos >= 0.95, in integers
        if 100 * tp >= 95 * n_pos {
            return Ok(fp as f64 / n_neg as f64);
        }
    }
    unreachable!("accepting every sample reaches 100% TPR")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorAggregate {
    /// Per-sample values are squared errors; the set error is `sqrt(mean)`.
    Rmse,
    /// Per-sample values are absolute relative errors; the set error is the mean.
    Absrel,
}

impl ErrorAggregate {
    fn finish(self, mean: f64) -> f64 {
        match self {
            ErrorAggregate::Rmse => mean.sqrt(),
            ErrorAggregate::Absrel => mean,
        }
    }
}

/// Set error after removing each prefix of `removal_order`, for k = 0..n-1.
fn sparsification_curve(errors: &[f64], removal_order: &[usize], agg: ErrorAggregate) -> Vec<f64> {
    let n = errors.len();
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + errors[removal_order[k]];
    }
    (0..n)
        .map(|k| agg.finish(suffix[k] / (n - k) as f64))
        .collect()
}

/// Area under the sparsification error: the mean gap between the curve that
/// removes the least confident samples first and the oracle curve that removes
/// the largest errors first, both normalised by the full-set error.
pub fn ause(confidences: &[f64], per_sample_errors: &[f64], agg: ErrorAggregate) -> Result<f64> {
    let n = confidences.len();
    if per_sample_errors.len() != n {
        return Err(Error::Dimension {
            what: "per-sample errors",
            expected: n,
            got: per_sample_errors.len(),
        });
    }
    if n < 2 {
        return Err(Error::UndefinedMetric("ause"));
    }
    if per_sample_errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::numerical("per-sample errors must be finite and non-negative"));
    }
    if confidences.iter().any(|c| c.is_nan()) {
        return Err(Error::numerical("NaN confidence"));
    }

    let mut by_confidence: Vec<usize> = (0..n).collect();
    by_confidence.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));
    let mut by_error: Vec<usize> = (0..n).collect();
    by_error.sort_by(|&a, &b| per_sample_errors[b].total_cmp(&per_sample_errors[a]));

    let model = sparsification_curve(per_sample_errors, &by_confidence, agg);
    let oracle = sparsification_curve(per_sample_errors, &by_error, agg);
    let full = model[0];
    if full == 0.0 {
        return Ok(0.0);
    }
    let gap: f64 = model.iter().zip(&oracle).map(|(m, o)| (m - o) / full).sum();
    // the oracle curve is pointwise minimal; clamp rounding residue
    Ok((gap / n as f64).max(0.0))
}

/// All six metrics for one estimator on one test set. Metrics that are
/// undefined for the data (a missing class, classification-mode AUSE) are `None`
/// and serialise as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: Option<f64>,
    pub aupr_error: Option<f64>,
    pub aupr_success: Option<f64>,
    pub fpr_at_95_tpr: Option<f64>,
    pub ause_rmse: Option<f64>,
    pub ause_absrel: Option<f64>,
    pub n_samples: usize,
    pub positive_rate: f64,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl MetricReport {
    /// Metrics computed from precomputed scores.
    pub fn from_scores(scores: &[f64], dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::config("empty test set"));
        }
        let labels = dataset.labels();
        let n = labels.len();
        let positive_rate = labels.iter().filter(|&&l| l).count() as f64 / n as f64;

        let (ause_rmse, ause_absrel) = match dataset.mode {
            TaskMode::Regression => {
                let squared: Vec<f64> = dataset
                    .samples
                    .iter()
                    .map(|s| (s.task_pred - s.ground_truth).powi(2))
                    .collect();
                let rmse = defined(ause(scores, &squared, ErrorAggregate::Rmse))?;
                let absrel = if dataset.samples.iter().any(|s| s.ground_truth == 0.0) {
                    None
                } else {
                    let rel: Vec<f64> = dataset
                        .samples
                        .iter()
                        .map(|s| (s.task_pred - s.ground_truth).abs() / s.ground_truth.abs())
                        .collect();
                    defined(ause(scores, &rel, ErrorAggregate::Absrel))?
                };
                (rmse, absrel)
            }
            TaskMode::Classification => (None, None),
        };

        Ok(Self {
            auroc: defined(auroc(scores, &labels))?,
            aupr_error: defined(aupr(scores, &labels, false))?,
            aupr_success: defined(aupr(scores, &labels, true))?,
            fpr_at_95_tpr: defined(fpr_at_95_tpr(scores, &labels))?,
            ause_rmse,
            ause_absrel,
            n_samples: n,
            positive_rate,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "auroc" => self.auroc,
            "aupr_error" => self.aupr_error,
            "aupr_success" => self.aupr_success,
            "fpr_at_95_tpr" => self.fpr_at_95_tpr,
            "ause_rmse" => self.ause_rmse,
            "ause_absrel" => self.ause_absrel,
            _ => None,
        }
    }

    pub const METRIC_NAMES: [&'static str; 6] = [
        "auroc",
        "aupr_error",
        "aupr_success",
        "fpr_at_95_tpr",
        "ause_rmse",
        "ause_absrel",
    ];
}

pub fn score_all(params: &[f64], arch: &Architecture, dataset: &Dataset) -> Result<Vec<f64>> {
    dataset
        .samples
        .iter()
        .map(|s| model::forward(params, arch, &s.input))
        .collect()
}

pub fn evaluate(params: &[f64], arch: &Architecture, dataset: &Dataset) -> Result<MetricReport> {
    if dataset.input_dim() != Some(arch.input_dim) {
        return Err(Error::Dimension {
            what: "dataset input_dim vs checkpoint",
            expected: arch.input_dim,
            got: dataset.input_dim().unwrap_or(0),
        });
    }
    MetricReport::from_scores(&score_all(params, arch, dataset)?, dataset)
}
