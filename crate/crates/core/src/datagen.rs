//! Seeded synthetic benchmarks for confidence estimation.
//!
//! Inputs come from a mixture of isotropic Gaussians. A frozen "task model"
//! predicts a target from each input with multiplicative noise whose scale
//! depends on where the input sits:
//!
//! * a shared hard half-space `u·x > τ` (same direction `u` in every cluster)
//!   raises the noise by a factor of `1 + HARD_GAIN`;
//! * each cluster carries its own difficulty multiplier, so cluster identity
//!   is informative on the training clusters but says nothing about an unseen
//!   one.
//!
//! The global noise scale is calibrated by bisection so the training set hits
//! the requested correct rate. With `shift_kind = held_out_cluster` the last
//! mixture component never appears in training and makes up most of the test
//! set.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample, TaskMode};
use crate::error::{Error, Result};
use crate::metrics::RELATIVE_ERROR_THRESHOLD;
use crate::rng::{self, Rng};

const HARD_GAIN: f64 = 9.0;
const HARD_SHARPNESS: f64 = 4.0;
/// Position of the hard half-space boundary, in cluster standard deviations.
const HARD_OFFSET: f64 = 1.0;
const CLUSTER_DIFFICULTY_SPREAD: f64 = 0.5;
const CALIBRATION_STEPS: usize = 60;
const CALIBRATION_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    None,
    HeldOutCluster,
    CovariateShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub input_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_input_clusters: usize,
    /// Distance between mixture centres.
    pub cluster_separation: f64,
    pub cluster_std: f64,
    pub target_correct_rate: f64,
    pub shift_kind: ShiftKind,
    pub mode: TaskMode,
    /// Share of the test set drawn from the held-out component.
    pub held_out_test_share: f64,
    /// Bisection range for the global noise scale.
    pub noise_range: [f64; 2],
    /// Number of classes in classification mode.
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            n_train: 10_000,
            n_test: 2_000,
            n_input_clusters: 4,
            cluster_separation: 6.0,
            cluster_std: 1.0,
            target_correct_rate: 0.99,
            shift_kind: ShiftKind::HeldOutCluster,
            mode: TaskMode::Regression,
            held_out_test_share: 0.8,
            noise_range: [1e-4, 10.0],
            n_classes: 5,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("n_train and n_test must be positive"));
        }
        if self.n_input_clusters == 0 {
            return Err(Error::config("n_input_clusters must be positive"));
        }
        if self.shift_kind == ShiftKind::HeldOutCluster && self.n_input_clusters < 2 {
            return Err(Error::config("held_out_cluster needs at least 2 input clusters"));
        }
        if !(self.target_correct_rate > 0.0 && self.target_correct_rate < 1.0) {
            return Err(Error::config("target_correct_rate must lie in (0, 1)"));
        }
        if !(self.cluster_std > 0.0 && self.cluster_separation >= 0.0) {
            return Err(Error::config("cluster_std must be positive and separation non-negative"));
        }
        if !(0.0..=1.0).contains(&self.held_out_test_share) {
            return Err(Error::config("held_out_test_share must lie in [0, 1]"));
        }
        let [lo, hi] = self.noise_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("noise_range must satisfy 0 < lo < hi"));
        }
        if self.mode == TaskMode::Classification && self.n_classes < 2 {
            return Err(Error::config("classification needs at least 2 classes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetadata {
    pub noise_scale: f64,
    pub held_out_cluster: Option<usize>,
    pub train_clusters: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub cluster_difficulty: Vec<f64>,
    pub realized_train_correct_rate: f64,
    pub realized_test_correct_rate: f64,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Dataset,
    pub test: Dataset,
    pub metadata: BenchmarkMetadata,
}

/// The frozen task model plus the geometry of the input mixture.
struct World {
    centers: Vec<Vec<f64>>,
    difficulty: Vec<f64>,
    hard_direction: Vec<f64>,
    target_direction: Vec<f64>,
    class_weights: Vec<Vec<f64>>,
    shift: Vec<f64>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl World {
    fn new(cfg: &BenchmarkConfig, rng: &mut Rng) -> Self {
        let d = cfg.input_dim;
        let k = cfg.n_input_clusters;
        // centres on orthogonal axes are exactly `cluster_separation` apart
        let radius = cfg.cluster_separation / std::f64::consts::SQRT_2;
        let mut axes: Vec<usize> = (0..d).collect();
        axes.shuffle(rng);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                if k <= d {
                    let mut v = vec![0.0; d];
                    v[axes[c]] = radius;
                    v
                } else {
                    unit(gaussian_vec(rng, d)).into_iter().map(|x| x * radius).collect()
                }
            })
            .collect();

        // hard direction orthogonal to every centre when there is room for it,
        // so the hard half-space cuts each cluster at the same relative place
        let mut hard = gaussian_vec(rng, d);
        if k < d {
            for &a in &axes[..k] {
                hard[a] = 0.0;
            }
        }
        let hard_direction = unit(hard);
        let mut difficulty: Vec<f64> = (0..k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (CLUSTER_DIFFICULTY_SPREAD * z).exp()
            })
            .collect();
        // ascending, so a held-out last component is the hardest one
        difficulty.sort_by(f64::total_cmp);
        let target_direction = unit(gaussian_vec(rng, d));
        let class_weights = (0..cfg.n_classes).map(|_| gaussian_vec(rng, d)).collect();
        let shift = unit(gaussian_vec(rng, d))
            .into_iter()
            .map(|x| 1.5 * cfg.cluster_std * x)
            .collect();
        World {
            centers,
            difficulty,
            hard_direction,
            target_direction,
            class_weights,
            shift,
        }
    }

    fn hardness(&self, x: &[f64], cluster: usize, cfg: &BenchmarkConfig) -> f64 {
        let t = HARD_SHARPNESS * (dot(&self.hard_direction, x) / cfg.cluster_std - HARD_OFFSET);
        self.difficulty[cluster] * (1.0 + HARD_GAIN / (1.0 + (-t).exp()))
    }

    fn sample_input(&self, cluster: usize, shifted: bool, cfg: &BenchmarkConfig, rng: &mut Rng) -> Vec<f64> {
        let mut x: Vec<f64> = self.centers[cluster]
            .iter()
            .map(|c| c + cfg.cluster_std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        if shifted {
            for (xi, s) in x.iter_mut().zip(&self.shift) {
                *xi += s;
            }
        }
        x
    }
}

/// Everything about a sample except the noise scale.
struct Draft {
    input: Vec<f64>,
    cluster: usize,
    hardness: f64,
    ground_truth: f64,
    /// Regression: one standard normal draw. Classification: one per class.
    noise: Vec<f64>,
    /// Classification logits of the noiseless task model.
    logits: Vec<f64>,
}

impl Draft {
    fn task_pred(&self, scale: f64, mode: TaskMode) -> f64 {
        match mode {
            TaskMode::Regression => self.ground_truth * (1.0 + scale * self.hardness * self.noise[0]),
            TaskMode::Classification => {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (c, (l, e)) in self.logits.iter().zip(&self.noise).enumerate() {
                    let v = l + scale * self.hardness * e;
                    if v > best.1 {
                        best = (c, v);
                    }
                }
                best.0 as f64
            }
        }
    }

    fn into_sample(self, scale: f64, mode: TaskMode) -> Sample {
        let pred = self.task_pred(scale, mode);
        Sample::new(self.input, pred, self.ground_truth, self.cluster, mode)
    }
}

fn draft(world: &World, cluster: usize, shifted: bool, cfg: &BenchmarkConfig, rng: &mut Rng) -> Draft {
    let input = world.sample_input(cluster, shifted, cfg, rng);
    let hardness = world.hardness(&input, cluster, cfg);
    let (ground_truth, logits, noise) = match cfg.mode {
        TaskMode::Regression => {
            let proj = dot(&world.target_direction, &input) / (cfg.input_dim as f64).sqrt();
            let gt = 10.0 + 3.0 * proj.tanh();
            (gt, Vec::new(), vec![StandardNormal.sample(rng)])
        }
        TaskMode::Classification => {
            let logits: Vec<f64> = world.class_weights.iter().map(|w| dot(w, &input)).collect();
            let gt = logits
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |b, (c, &v)| if v > b.1 { (c, v) } else { b })
                .0 as f64;
            (gt, logits, gaussian_vec(rng, cfg.n_classes))
        }
    };
    Draft {
        input,
        cluster,
        hardness,
        ground_truth,
        noise,
        logits,
    }
}

fn correct_rate(drafts: &[Draft], scale: f64, mode: TaskMode) -> f64 {
    let correct = drafts
        .iter()
        .filter(|d| match mode {
            TaskMode::Regression => (scale * d.hardness * d.noise[0]).abs() < RELATIVE_ERROR_THRESHOLD,
            TaskMode::Classification => d.task_pred(scale, mode) == d.ground_truth,
        })
        .count();
    correct as f64 / drafts.len() as f64
}

/// Noise scale whose realised correct rate is closest to the target, found by
/// log-space bisection (the rate is non-increasing in the scale). Fails when
/// the closest rate is still outside the tolerance.
fn calibrate(drafts: &[Draft], cfg: &BenchmarkConfig) -> Result<f64> {
    let target = cfg.target_correct_rate;
    let [mut lo, mut hi] = cfg.noise_range;
    let mut best = (f64::INFINITY, lo);
    let mut consider = |s: f64| -> f64 {
        let r = correct_rate(drafts, s, cfg.mode);
        if (r - target).abs() < best.0 {
            best = ((r - target).abs(), s);
        }
        r
    };
    consider(lo);
    consider(hi);
    for _ in 0..CALIBRATION_STEPS {
        let mid = (lo * hi).sqrt();
        let r = consider(mid);
        if r > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 <= CALIBRATION_TOLERANCE {
        return Ok(best.1);
    }
    Err(Error::config(format!(
        "cannot calibrate noise to correct rate {target} within ±{CALIBRATION_TOLERANCE} \
         using noise range [{}, {}] (rate at low end {:.6}, at high end {:.6})",
        cfg.noise_range[0],
        cfg.noise_range[1],
        correct_rate(drafts, cfg.noise_range[0], cfg.mode),
        correct_rate(drafts, cfg.noise_range[1], cfg.mode),
    )))
}

pub fn generate(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, rng::streams::DATAGEN);
    let world = World::new(cfg, &mut rng);
    let k = cfg.n_input_clusters;

    let held_out = (cfg.shift_kind == ShiftKind::HeldOutCluster).then_some(k - 1);
    let train_clusters: Vec<usize> = (0..k).filter(|&c| Some(c) != held_out).collect();

    let train: Vec<Draft> = (0..cfg.n_train)
        .map(|_| {
            let c = train_clusters[rng.random_range(0..train_clusters.len())];
            draft(&world, c, false, cfg, &mut rng)
        })
        .collect();
    let test: Vec<Draft> = (0..cfg.n_test)
        .map(|_| match (cfg.shift_kind, held_out) {
            (ShiftKind::HeldOutCluster, Some(h)) => {
                let c = if rng.random::<f64>() < cfg.held_out_test_share {
                    h
                } else {
                    train_clusters[rng.random_range(0..train_clusters.len())]
                };
                draft(&world, c, false, cfg, &mut rng)
            }
            (ShiftKind::CovariateShift, _) => {
                let c = rng.random_range(0..k);
                draft(&world, c, true, cfg, &mut rng)
            }
            _ => {
                let c = rng.random_range(0..k);
                draft(&world, c, false, cfg, &mut rng)
            }
        })
        .collect();

    let scale = calibrate(&train, cfg)?;
    let train = Dataset::new(
        cfg.mode,
        train.into_iter().map(|d| d.into_sample(scale, cfg.mode)).collect(),
    );
    let test = Dataset::new(
        cfg.mode,
        test.into_iter().map(|d| d.into_sample(scale, cfg.mode)).collect(),
    );
    let rate = |d: &Dataset| d.samples.iter().filter(|s| s.correct).count() as f64 / d.len() as f64;
    let metadata = BenchmarkMetadata {
        noise_scale: scale,
        held_out_cluster: held_out,
        train_clusters,
        centers: world.centers.clone(),
        cluster_difficulty: world.difficulty.clone(),
        realized_train_correct_rate: rate(&train),
        realized_test_correct_rate: rate(&test),
    };
    Ok(Benchmark { train, test, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(shift_kind: ShiftKind) -> BenchmarkConfig {
        BenchmarkConfig {
            n_train: 2_000,
            n_test: 500,
            shift_kind,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn default_rate_is_calibrated() {
        let b = generate(&BenchmarkConfig::default()).unwrap();
        let r = b.metadata.realized_train_correct_rate;
        assert!((0.98..=1.0).contains(&r), "{r}");
        assert_eq!(b.train.len(), 10_000);
        assert_eq!(b.test.len(), 2_000);
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small(ShiftKind::HeldOutCluster)).unwrap();
        let b = generate(&small(ShiftKind::HeldOutCluster)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test.to_csv(), b.test.to_csv());
        let c = generate(&BenchmarkConfig { seed: 1, ..small(ShiftKind::HeldOutCluster) }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn held_out_cluster_dominates_test_and_is_absent_in_train() {
        let b = generate(&small(ShiftKind::HeldOutCluster)).unwrap();
        let h = b.metadata.held_out_cluster.unwrap();
        assert!(b.train.samples.iter().all(|s| s.cluster_id != h));
        let summary = b.test.describe().unwrap();
        let (majority, _) = summary.cluster_counts.iter().max_by_key(|c| c.1).unwrap();
        assert_eq!(*majority, h);
        assert!(!b.metadata.train_clusters.contains(majority));
    }

    #[test]
    fn no_shift_gives_exchangeable_inputs() {
        // per-coordinate Welch z test on the means, Bonferroni over 8 features
        // at family level 0.01; repeated over 20 seeds, more than 3 rejections
        // has probability < 1e-4 under exchangeability
        let z_crit = 3.227;
        let mut rejections = 0;
        for seed in 0..20 {
            let b = generate(&BenchmarkConfig { seed, ..small(ShiftKind::None) }).unwrap();
            let d = b.train.input_dim().unwrap();
            let rejected = (0..d).any(|j| {
                let col = |ds: &Dataset| -> (f64, f64, f64) {
                    let n = ds.len() as f64;
                    let m = ds.samples.iter().map(|s| s.input[j]).sum::<f64>() / n;
                    let v = ds.samples.iter().map(|s| (s.input[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
                    (m, v, n)
                };
                let (m1, v1, n1) = col(&b.train);
                let (m2, v2, n2) = col(&b.test);
                ((m1 - m2) / (v1 / n1 + v2 / n2).sqrt()).abs() > z_crit
            });
            rejections += usize::from(rejected);
        }
        assert!(rejections <= 3, "{rejections} of 20 seeds rejected");
    }

    #[test]
    fn covariate_shift_moves_test_inputs() {
        let b = generate(&small(ShiftKind::CovariateShift)).unwrap();
        let mean = |ds: &Dataset| -> Vec<f64> {
            let n = ds.len() as f64;
            (0..8).map(|j| ds.samples.iter().map(|s| s.input[j]).sum::<f64>() / n).collect()
        };
        let (a, t) = (mean(&b.train), mean(&b.test));
        let dist: f64 = a.iter().zip(&t).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 1.0, "{dist}");
    }

    #[test]
    fn infeasible_target_is_a_config_error() {
        let cfg = BenchmarkConfig {
            target_correct_rate: 0.999_999,
            noise_range: [0.5, 0.6],
            ..small(ShiftKind::None)
        };
        let err = generate(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("0.999999")), "{err}");
    }

    #[test]
    fn classification_mode_calibrates() {
        let cfg = BenchmarkConfig {
            mode: TaskMode::Classification,
            target_correct_rate: 0.9,
            ..small(ShiftKind::None)
        };
        let b = generate(&cfg).unwrap();
        assert!((b.metadata.realized_train_correct_rate - 0.9).abs() <= 0.01);
        assert!(b.train.samples.iter().all(|s| s.ground_truth.fract() == 0.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&BenchmarkConfig { target_correct_rate: 1.0, ..small(ShiftKind::None) }).is_err());
        assert!(generate(&BenchmarkConfig { n_input_clusters: 1, ..small(ShiftKind::HeldOutCluster) }).is_err());
    }
}
