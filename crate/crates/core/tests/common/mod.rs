//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use metaconf::rng::{self, Rng};
use rand::Rng as _;

/// AUROC by counting every (positive, negative) pair; ties count one half.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// Average precision by sweeping every distinct threshold from the top:
/// `Σ (R_k − R_{k−1}) P_k` with `score ≥ t` predicted positive.
pub fn aupr_sweep(scores: &[f64], labels: &[bool], positive: bool) -> f64 {
    let (scores, labels): (Vec<f64>, Vec<bool>) = if positive {
        (scores.to_vec(), labels.to_vec())
    } else {
        (scores.iter().map(|s| -s).collect(), labels.iter().map(|l| !l).collect())
    };
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in distinct_desc(&scores) {
        let tp = scores.iter().zip(&labels).filter(|(s, l)| **s >= t && **l).count() as f64;
        let predicted = scores.iter().filter(|s| **s >= t).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// FPR at the highest threshold whose TPR is at least 95%, found by trying
/// every distinct score as the threshold.
pub fn fpr95_enumerate(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    for t in distinct_desc(scores) {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l).count();
        if 100 * tp >= 95 * p {
            let fp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && !**l).count();
            return fp as f64 / n as f64;
        }
    }
    unreachable!("the lowest threshold has TPR 1")
}

fn set_error(errors: &[f64], rmse: bool) -> f64 {
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    if rmse {
        mean.sqrt()
    } else {
        mean
    }
}

/// AUSE straight from the definition: remove samples one at a time, least
/// confident first (lowest index among ties) or largest error first for the
/// oracle, recomputing the set error from scratch at each step.
pub fn ause_definition(conf: &[f64], errors: &[f64], rmse: bool) -> f64 {
    let n = conf.len();
    let curve = |by_confidence: bool| -> Vec<f64> {
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let kept: Vec<f64> = remaining.iter().map(|&i| errors[i]).collect();
            out.push(set_error(&kept, rmse));
            let pos = if by_confidence {
                (0..remaining.len())
                    .min_by(|&a, &b| conf[remaining[a]].total_cmp(&conf[remaining[b]]).then(remaining[a].cmp(&remaining[b])))
                    .unwrap()
            } else {
                (0..remaining.len())
                    .max_by(|&a, &b| errors[remaining[a]].total_cmp(&errors[remaining[b]]))
                    .unwrap()
            };
            remaining.remove(pos);
        }
        out
    };
    let model = curve(true);
    let oracle = curve(false);
    if model[0] == 0.0 {
        return 0.0;
    }
    let gap: f64 = model.iter().zip(&oracle).map(|(m, o)| (m - o) / model[0]).sum();
    (gap / n as f64).max(0.0)
}

/// A random instance of size 2..=12 with both classes present and scores
/// drawn from a small grid so ties are common.
pub fn random_instance(r: &mut Rng) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    loop {
        let n = r.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64 / 5.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
        let errors: Vec<f64> = (0..n).map(|_| r.random_range(0.0..4.0)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels, errors);
        }
    }
}

pub fn instance_rng(seed: u64) -> Rng {
    rng::stream(seed, "metric-oracle")
}

/// Upper 1% point of the chi-square distribution with 99 degrees of freedom.
pub const CHI2_99_AT_001: f64 = 134.642;

pub fn chi_square_uniform(samples: &[f64], bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &p in samples {
        counts[((p * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

pub fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("metaconf-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
