//! Virtual training, virtual testing and meta-optimisation.
//!
//! One meta step on an episode `(vtr, vte)`:
//!
//! ```text
//! φ'  = φ − α ∇L_vtr(φ)                        virtual training
//! L_vte(φ')                                    virtual testing
//! g   = ∇L_vtr(φ) + (I − α H_vtr(φ)) ∇L_vte(φ')
//! φ  ← φ − β g                                 actual update
//! ```
//!
//! `g` is the exact gradient of `L_vtr(φ) + L_vte(φ − α∇L_vtr(φ))`. The
//! Hessian-vector product comes from a forward-over-reverse pass, so no
//! Hessian is ever formed. With `second_order = false` the `α H v` term is
//! dropped.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::episodes::{
    build_input_episode, build_label_episode, cluster_input_pool, epoch_split, round_half_up,
    split_correctness_pools, CorrectnessPools, EpisodeKind, EpisodePair, InputPools, Provenance,
};
use crate::error::{Error, Result};
use crate::model::{self, Architecture, Batch, ParamVector};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Label episodes on odd iterations, input episodes on even ones, meta update.
    Full,
    LabelOnly,
    InputOnly,
    /// Same episodes as `Full`, updated with `∇(L_vtr(φ) + L_vte(φ))`.
    Joint,
    /// Minibatch training with per-sample weights from inverse class frequency.
    Reweight,
    /// Minibatch training on class-balanced batches.
    Resample,
    Plain,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::LabelOnly,
        Variant::InputOnly,
        Variant::Joint,
        Variant::Reweight,
        Variant::Resample,
        Variant::Plain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LabelOnly => "label_only",
            Variant::InputOnly => "input_only",
            Variant::Joint => "joint",
            Variant::Reweight => "reweight",
            Variant::Resample => "resample",
            Variant::Plain => "plain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }

    fn uses_episodes(self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::LabelOnly | Variant::InputOnly | Variant::Joint
        )
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Virtual-training learning rate.
    pub alpha: f64,
    /// Meta (actual update) learning rate.
    pub beta: f64,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    /// Share of the correctness pool used for virtual-training batches.
    pub c1_fraction: f64,
    pub n_clusters: usize,
    pub variant: Variant,
    pub second_order: bool,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 5e-4,
            beta: 1e-4,
            epochs: 10,
            iterations_per_epoch: 50,
            batch_size: 64,
            c1_fraction: 0.6,
            n_clusters: 6,
            variant: Variant::Full,
            second_order: true,
            max_grad_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta must be positive"));
        }
        if self.epochs == 0 || self.iterations_per_epoch == 0 || self.batch_size == 0 || self.n_clusters == 0 {
            return Err(Error::config(
                "epochs, iterations_per_epoch, batch_size and n_clusters must be at least 1",
            ));
        }
        if !(self.c1_fraction > 0.0 && self.c1_fraction < 1.0) {
            return Err(Error::config("c1_fraction must lie in (0, 1)"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config("max_grad_norm must be positive"));
            }
        }
        Ok(())
    }
}

/// The two losses of one episode, as functions of the parameters.
pub trait MetaObjective {
    fn dim(&self) -> usize;
    fn train_loss_grad(&self, params: &[f64]) -> Result<(f64, ParamVector)>;
    fn test_loss_grad(&self, params: &[f64]) -> Result<(f64, ParamVector)>;
    /// `H_vtr(params) · direction`.
    fn train_hvp(&self, params: &[f64], direction: &[f64]) -> Result<ParamVector>;

    fn train_loss(&self, params: &[f64]) -> Result<f64> {
        Ok(self.train_loss_grad(params)?.0)
    }

    fn test_loss(&self, params: &[f64]) -> Result<f64> {
        Ok(self.test_loss_grad(params)?.0)
    }
}

/// An episode of the confidence estimator: BCE on the virtual training and
/// virtual testing batches.
pub struct EpisodeObjective<'a> {
    pub arch: &'a Architecture,
    pub vtr: Batch<'a>,
    pub vte: Batch<'a>,
}

impl<'a> EpisodeObjective<'a> {
    pub fn new(arch: &'a Architecture, dataset: &'a Dataset, episode: &EpisodePair) -> Self {
        Self {
            arch,
            vtr: dataset.batch(&episode.vtr),
            vte: dataset.batch(&episode.vte),
        }
    }
}

impl MetaObjective for EpisodeObjective<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn train_loss_grad(&self, params: &[f64]) -> Result<(f64, ParamVector)> {
        model::loss_and_grad(params, self.arch, &self.vtr)
    }

    fn test_loss_grad(&self, params: &[f64]) -> Result<(f64, ParamVector)> {
        model::loss_and_grad(params, self.arch, &self.vte)
    }

    fn train_hvp(&self, params: &[f64], direction: &[f64]) -> Result<ParamVector> {
        model::hessian_vector_product(params, self.arch, &self.vtr, direction)
    }

    fn train_loss(&self, params: &[f64]) -> Result<f64> {
        model::loss(params, self.arch, &self.vtr)
    }

    fn test_loss(&self, params: &[f64]) -> Result<f64> {
        model::loss(params, self.arch, &self.vte)
    }
}

/// `L_vtr = ½ a ‖φ‖²`, `L_vte = ½ b ‖φ‖²`; the meta-gradient has the closed
/// form `a φ + b (1 − α a)² φ`.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub dim: usize,
}

impl Quadratic {
    pub fn closed_form_meta_gradient(&self, params: &[f64], alpha: f64) -> ParamVector {
        let k = self.a + self.b * (1.0 - alpha * self.a).powi(2);
        ParamVector(params.iter().map(|p| k * p).collect())
    }
}

impl MetaObjective for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn train_loss_grad(&self, params: &[f64]) -> Result<(f64, ParamVector)> {
        let sq: f64 = params.iter().map(|p| p * p).sum();
        Ok((0.5 * self.a * sq, ParamVector(params.iter().map(|p| self.a * p).collect())))
    }

    fn test_loss_grad(&self, params: &[f64]) -> Result<(f64, ParamVector)> {
        let sq: f64 = params.iter().map(|p| p * p).sum();
        Ok((0.5 * self.b * sq, ParamVector(params.iter().map(|p| self.b * p).collect())))
    }

    fn train_hvp(&self, _params: &[f64], direction: &[f64]) -> Result<ParamVector> {
        Ok(ParamVector(direction.iter().map(|v| self.a * v).collect()))
    }
}

/// Result of one simulated gradient step on the virtual training set.
#[derive(Debug, Clone)]
pub struct VirtualStep {
    pub params: ParamVector,
    pub loss: f64,
    pub grad: ParamVector,
}

/// `φ' = φ − α ∇L_vtr(φ)`; `params` is left untouched.
pub fn virtual_step<O: MetaObjective + ?Sized>(objective: &O, params: &[f64], alpha: f64) -> Result<VirtualStep> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha must be non-negative"));
    }
    let (loss, grad) = objective.train_loss_grad(params)?;
    let stepped = ParamVector(params.iter().zip(grad.iter()).map(|(p, g)| p - alpha * g).collect());
    Ok(VirtualStep {
        params: stepped,
        loss,
        grad,
    })
}

/// Virtual training of the confidence estimator on one batch.
pub fn virtual_train(params: &[f64], arch: &Architecture, vtr: &Batch<'_>, alpha: f64) -> Result<VirtualStep> {
    let (loss, grad) = model::loss_and_grad(params, arch, vtr)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha must be non-negative"));
    }
    let stepped = ParamVector(params.iter().zip(grad.iter()).map(|(p, g)| p - alpha * g).collect());
    Ok(VirtualStep {
        params: stepped,
        loss,
        grad,
    })
}

/// Loss of the virtually trained parameters on the virtual testing batch.
pub fn virtual_test(stepped: &[f64], arch: &Architecture, vte: &Batch<'_>) -> Result<f64> {
    model::loss(stepped, arch, vte)
}

#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub grad: ParamVector,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_grad_norm: f64,
}

/// Gradient of `L_vtr(φ) + L_vte(φ − α∇L_vtr(φ))` with respect to `φ`.
pub fn meta_gradient<O: MetaObjective + ?Sized>(
    objective: &O,
    params: &[f64],
    alpha: f64,
    second_order: bool,
) -> Result<MetaGradient> {
    let step = virtual_step(objective, params, alpha)?;
    let (test_loss, test_grad) = objective.test_loss_grad(&step.params)?;
    let mut grad: Vec<f64> = step.grad.iter().zip(test_grad.iter()).map(|(a, b)| a + b).collect();
    if second_order && alpha != 0.0 {
        let hv = objective.train_hvp(params, &test_grad)?;
        for (g, h) in grad.iter_mut().zip(hv.iter()) {
            *g -= alpha * h;
        }
    }
    let grad = ParamVector(grad);
    if !grad.is_finite() {
        return Err(Error::numerical("non-finite meta-gradient"));
    }
    Ok(MetaGradient {
        train_grad_norm: step.grad.norm(),
        grad,
        train_loss: step.loss,
        test_loss,
    })
}

/// `∇(L_vtr(φ) + L_vte(φ))`, with no virtual step.
pub fn joint_gradient<O: MetaObjective + ?Sized>(objective: &O, params: &[f64]) -> Result<MetaGradient> {
    let (train_loss, g_tr) = objective.train_loss_grad(params)?;
    let (test_loss, g_te) = objective.test_loss_grad(params)?;
    Ok(MetaGradient {
        train_grad_norm: g_tr.norm(),
        grad: ParamVector(g_tr.iter().zip(g_te.iter()).map(|(a, b)| a + b).collect()),
        train_loss,
        test_loss,
    })
}

/// Scalar meta objective `L_vtr(φ) + L_vte(φ − α∇L_vtr(φ))`.
pub fn meta_objective<O: MetaObjective + ?Sized>(objective: &O, params: &[f64], alpha: f64) -> Result<f64> {
    let step = virtual_step(objective, params, alpha)?;
    Ok(step.loss + objective.test_loss(&step.params)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub n_checked: usize,
}

/// Components smaller than this are compared absolutely; central differences
/// at step 1e-5 carry roughly 1e-11 of rounding noise.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-4;
const GRADCHECK_DIRECT_LIMIT: usize = 500;
const GRADCHECK_DIRECTIONS: usize = 64;

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_ABS_FLOOR)
}

/// Compares `meta_gradient` against central finite differences of the meta
/// objective, per coordinate (or along random unit directions when the
/// parameter count exceeds 500).
pub fn grad_check<O: MetaObjective + ?Sized>(
    objective: &O,
    params: &[f64],
    alpha: f64,
    step: f64,
    second_order: bool,
) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let g = meta_gradient(objective, params, alpha, second_order)?.grad;
    let f = |p: &[f64]| meta_objective(objective, p, alpha);
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        n_checked: 0,
    };
    let mut probe = params.to_vec();
    let mut record = |analytic: f64, numeric: f64| {
        worst.max_rel_error = worst.max_rel_error.max(rel_error(analytic, numeric));
        worst.max_abs_error = worst.max_abs_error.max((analytic - numeric).abs());
        worst.n_checked += 1;
    };

    if params.len() <= GRADCHECK_DIRECT_LIMIT {
        for i in 0..params.len() {
            probe[i] = params[i] + step;
            let up = f(&probe)?;
            probe[i] = params[i] - step;
            let down = f(&probe)?;
            probe[i] = params[i];
            record(g[i], (up - down) / (2.0 * step));
        }
    } else {
        let mut r = rng::stream(params.len() as u64, streams::GRADCHECK);
        for _ in 0..GRADCHECK_DIRECTIONS {
            let d: Vec<f64> = (0..params.len()).map(|_| r.random::<f64>() - 0.5).collect();
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d: Vec<f64> = d.iter().map(|x| x / n).collect();
            let shifted = |s: f64| -> Vec<f64> { params.iter().zip(&d).map(|(p, di)| p + s * di).collect() };
            let numeric = (f(&shifted(step))? - f(&shifted(-step))?) / (2.0 * step);
            let analytic: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            record(analytic, numeric);
        }
    }
    Ok(worst)
}

/// One seeded gradient-check case: a small tanh network and a random episode.
pub struct GradCheckCase {
    pub arch: Architecture,
    pub params: ParamVector,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub n_train: usize,
    pub alpha: f64,
}

impl GradCheckCase {
    pub const ALPHAS: [f64; 3] = [1e-3, 1e-2, 1e-1];

    /// Case `index` of the suite rooted at `seed`: input_dim 4, hidden 12×8
    /// (173 parameters), 6 + 6 samples, α cycling through [`Self::ALPHAS`].
    pub fn random(seed: u64, index: usize) -> Self {
        let mut r = rng::indexed_stream(seed, streams::GRADCHECK, index as u64);
        let arch = Architecture::new(4, vec![12, 8], model::Activation::Tanh).expect("valid architecture");
        // wider than the default init so the curvature term is not negligible
        let params = ParamVector(
            arch.init_params(&mut r)
                .iter()
                .map(|p| 2.0 * p)
                .collect(),
        );
        let n = 12;
        let inputs = (0..n)
            .map(|_| (0..4).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let labels = (0..n).map(|i| if i % 2 == 0 || r.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
        Self {
            arch,
            params,
            inputs,
            labels,
            n_train: 6,
            alpha: Self::ALPHAS[index % Self::ALPHAS.len()],
        }
    }

    pub fn objective(&self) -> EpisodeObjective<'_> {
        let (tr, te) = self.inputs.split_at(self.n_train);
        let (ltr, lte) = self.labels.split_at(self.n_train);
        EpisodeObjective {
            arch: &self.arch,
            vtr: Batch::new(tr.iter().map(Vec::as_slice).collect(), ltr.to_vec()),
            vte: Batch::new(te.iter().map(Vec::as_slice).collect(), lte.to_vec()),
        }
    }

    pub fn check(&self, step: f64, second_order: bool) -> Result<GradCheck> {
        grad_check(&self.objective(), &self.params, self.alpha, step, second_order)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Global 1-based iteration index.
    pub iter: usize,
    pub epoch: usize,
    /// 1-based iteration index within the epoch.
    pub step: usize,
    pub kind: EpisodeKind,
    pub l_vtr: f64,
    /// Virtual-testing loss: at `φ'` for meta variants, at `φ` for joint.
    pub l_vte: Option<f64>,
    pub grad_norm: f64,
    pub vtr_grad_norm: f64,
    /// Whether the update evaluated the loss at the virtually trained `φ'`.
    pub used_virtual_step: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: ParamVector,
    pub gradient: MetaGradient,
}

fn apply_update(params: &[f64], grad: &ParamVector, config: &TrainConfig) -> Result<ParamVector> {
    let mut scale = config.beta;
    if let Some(max) = config.max_grad_norm {
        let n = grad.norm();
        if n > max {
            scale *= max / n;
        }
    }
    let next = ParamVector(params.iter().zip(grad.iter()).map(|(p, g)| p - scale * g).collect());
    if !next.is_finite() {
        return Err(Error::numerical("parameters became non-finite"));
    }
    Ok(next)
}

/// `φ ← φ − β · meta_gradient`.
pub fn meta_step<O: MetaObjective + ?Sized>(objective: &O, params: &[f64], config: &TrainConfig) -> Result<StepOutcome> {
    let gradient = meta_gradient(objective, params, config.alpha, config.second_order)?;
    Ok(StepOutcome {
        params: apply_update(params, &gradient.grad, config)?,
        gradient,
    })
}

/// `φ ← φ − β ∇(L_vtr(φ) + L_vte(φ))`.
pub fn joint_step<O: MetaObjective + ?Sized>(objective: &O, params: &[f64], config: &TrainConfig) -> Result<StepOutcome> {
    let gradient = joint_gradient(objective, params)?;
    Ok(StepOutcome {
        params: apply_update(params, &gradient.grad, config)?,
        gradient,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub history: TrainHistory,
}

/// Checks every pool-size precondition of the configured variant up front.
fn check_pool_sizes(n: usize, arch: &Architecture, dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    if dataset.input_dim() != Some(arch.input_dim) {
        return Err(Error::Dimension {
            what: "dataset input_dim vs architecture",
            expected: arch.input_dim,
            got: dataset.input_dim().unwrap_or(0),
        });
    }
    let b = config.batch_size;
    let correctness_pool = |pool: usize| -> Result<()> {
        let c1 = round_half_up(config.c1_fraction * pool as f64);
        if c1 < b || pool.saturating_sub(c1) < b {
            return Err(Error::config(format!(
                "correctness pool of {pool} splits into {c1} / {} samples; both must be at least batch_size {b}",
                pool.saturating_sub(c1)
            )));
        }
        Ok(())
    };
    let input_pool = |pool: usize| -> Result<()> {
        if pool < config.n_clusters.max(2) {
            return Err(Error::config(format!(
                "input pool of {pool} samples cannot form {} clusters",
                config.n_clusters
            )));
        }
        if config.n_clusters < 2 {
            return Err(Error::config("input episodes need n_clusters >= 2"));
        }
        Ok(())
    };
    match config.variant {
        Variant::Full | Variant::Joint => {
            if n < 2 * b {
                return Err(Error::config(format!(
                    "dataset of {n} samples is too small to halve into batches of batch_size {b}"
                )));
            }
            correctness_pool(n / 2)?;
            input_pool(n - n / 2)?;
        }
        Variant::LabelOnly => correctness_pool(n)?,
        Variant::InputOnly => input_pool(n)?,
        Variant::Reweight | Variant::Resample | Variant::Plain => {
            if n < 2 * b {
                return Err(Error::config(format!("dataset of {n} samples is smaller than 2 × batch_size {b}")));
            }
            let pos = dataset.samples.iter().filter(|s| s.correct).count();
            if matches!(config.variant, Variant::Reweight | Variant::Resample) && (pos == 0 || pos == n) {
                return Err(Error::config("class-balanced baselines need both correctness classes"));
            }
        }
    }
    Ok(())
}

/// Per-epoch state for the episode-based variants.
struct EpochPools {
    correctness: Option<CorrectnessPools>,
    input: Option<InputPools>,
}

fn prepare_epoch(
    dataset: &Dataset,
    arch: &Architecture,
    params: &[f64],
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochPools> {
    let n = dataset.len();
    let mut split_rng = rng::indexed_stream(config.seed, streams::SPLIT, epoch as u64);
    let mut cluster_rng = rng::indexed_stream(config.seed, streams::CLUSTER, epoch as u64);
    let (label_pool, input_pool): (Option<Vec<usize>>, Option<Vec<usize>>) = match config.variant {
        Variant::Full | Variant::Joint => {
            let (c, i) = epoch_split(n, config.batch_size, &mut split_rng)?;
            (Some(c), Some(i))
        }
        Variant::LabelOnly => (Some((0..n).collect()), None),
        Variant::InputOnly => (None, Some((0..n).collect())),
        _ => (None, None),
    };
    let correctness = label_pool
        .map(|pool| split_correctness_pools(dataset, &pool, config.c1_fraction, &mut split_rng))
        .transpose()?;
    let input = input_pool
        .map(|pool| cluster_input_pool(dataset, &pool, params, arch, config.n_clusters, &mut cluster_rng))
        .transpose()?;
    Ok(EpochPools { correctness, input })
}

/// Class pools of the whole training set, for the baselines.
struct ClassPools {
    correct: Vec<usize>,
    incorrect: Vec<usize>,
}

impl ClassPools {
    fn new(dataset: &Dataset) -> Self {
        let (correct, incorrect) = (0..dataset.len()).partition(|&i| dataset.samples[i].correct);
        Self { correct, incorrect }
    }
}

fn baseline_batch<'d>(
    dataset: &'d Dataset,
    classes: &ClassPools,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Batch<'d> {
    let size = 2 * config.batch_size;
    let n = dataset.len();
    match config.variant {
        Variant::Resample => {
            let mut idx: Vec<usize> = (0..config.batch_size)
                .map(|_| classes.correct[rng.random_range(0..classes.correct.len())])
                .collect();
            idx.extend((0..config.batch_size).map(|_| classes.incorrect[rng.random_range(0..classes.incorrect.len())]));
            dataset.batch(&idx)
        }
        Variant::Reweight => {
            let idx: Vec<usize> = index::sample(rng, n, size).into_iter().collect();
            // inverse class frequency, normalised so the average weight over the dataset is 1
            let w_pos = n as f64 / (2.0 * classes.correct.len() as f64);
            let w_neg = n as f64 / (2.0 * classes.incorrect.len() as f64);
            let weights = idx
                .iter()
                .map(|&i| if dataset.samples[i].correct { w_pos } else { w_neg })
                .collect();
            dataset.batch(&idx).with_weights(weights)
        }
        _ => {
            let idx: Vec<usize> = index::sample(rng, n, size).into_iter().collect();
            dataset.batch(&idx)
        }
    }
}

fn next_episode(
    pools: &EpochPools,
    variant: Variant,
    step: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<EpisodePair> {
    let label_turn = match variant {
        Variant::LabelOnly => true,
        Variant::InputOnly => false,
        // odd steps (1, 3, ...) construct label episodes
        _ => step % 2 == 1,
    };
    if label_turn {
        let p = pools.correctness.as_ref().expect("correctness pools prepared");
        build_label_episode(p, batch_size, rng)
    } else {
        let p = pools.input.as_ref().expect("input pools prepared");
        build_input_episode(p, batch_size, rng)
    }
}

/// Trains the estimator from a seeded initialisation.
pub fn train(dataset: &Dataset, arch: &Architecture, config: &TrainConfig) -> Result<TrainOutcome> {
    let init = arch.init_params(&mut rng::stream(config.seed, streams::INIT));
    train_from(dataset, arch, config, init)
}

/// Trains starting from the given parameters.
pub fn train_from(
    dataset: &Dataset,
    arch: &Architecture,
    config: &TrainConfig,
    init: ParamVector,
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    if config.second_order && !arch.activation.is_smooth() && matches!(config.variant, Variant::Full | Variant::LabelOnly | Variant::InputOnly) {
        return Err(Error::config(format!(
            "second-order meta-gradient needs a smooth activation, got {}",
            arch.activation
        )));
    }
    if init.len() != arch.param_count() {
        return Err(Error::Dimension {
            what: "initial parameters",
            expected: arch.param_count(),
            got: init.len(),
        });
    }
    check_pool_sizes(dataset.len(), arch, dataset, config)?;

    let mut params = init;
    let mut history = TrainHistory::default();
    let mut episode_rng = rng::stream(config.seed, streams::EPISODE);
    let classes = ClassPools::new(dataset);
    let mut iter = 0;

    for epoch in 1..=config.epochs {
        let pools = if config.variant.uses_episodes() {
            Some(prepare_epoch(dataset, arch, &params, config, epoch)?)
        } else {
            None
        };
        for step in 1..=config.iterations_per_epoch {
            iter += 1;
            let record = match &pools {
                Some(pools) => {
                    let episode = next_episode(pools, config.variant, step, config.batch_size, &mut episode_rng)?;
                    let objective = EpisodeObjective::new(arch, dataset, &episode);
                    let joint = config.variant == Variant::Joint;
                    let out = if joint {
                        joint_step(&objective, &params, config)?
                    } else {
                        meta_step(&objective, &params, config)?
                    };
                    params = out.params;
                    IterationRecord {
                        iter,
                        epoch,
                        step,
                        kind: episode.provenance.kind(),
                        l_vtr: out.gradient.train_loss,
                        l_vte: Some(out.gradient.test_loss),
                        grad_norm: out.gradient.grad.norm(),
                        vtr_grad_norm: out.gradient.train_grad_norm,
                        used_virtual_step: !joint,
                        provenance: Some(episode.provenance),
                    }
                }
                None => {
                    let batch = baseline_batch(dataset, &classes, config, &mut episode_rng);
                    let (loss, grad) = model::loss_and_grad(&params, arch, &batch)?;
                    params = apply_update(&params, &grad, config)?;
                    IterationRecord {
                        iter,
                        epoch,
                        step,
                        kind: EpisodeKind::Batch,
                        l_vtr: loss,
                        l_vte: None,
                        grad_norm: grad.norm(),
                        vtr_grad_norm: grad.norm(),
                        used_virtual_step: false,
                        provenance: None,
                    }
                }
            };
            history.records.push(record);
        }
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, TaskMode};
    use crate::model::Activation;

    #[test]
    fn quadratic_virtual_step() {
        let q = Quadratic { a: 1.0, b: 1.0, dim: 1 };
        let s = virtual_step(&q, &[2.0], 0.1).unwrap();
        assert!((s.params[0] - 1.8).abs() < 1e-15);
        let s = virtual_step(&q, &[2.0], 0.0).unwrap();
        assert_eq!(s.params[0], 2.0);
    }

    #[test]
    fn quadratic_meta_gradient_and_step() {
        let q = Quadratic { a: 1.0, b: 1.0, dim: 1 };
        let g = meta_gradient(&q, &[2.0], 0.1, true).unwrap();
        assert!((g.grad[0] - 3.62).abs() < 1e-14);
        let cfg = TrainConfig {
            alpha: 0.1,
            beta: 0.01,
            ..TrainConfig::default()
        };
        let out = meta_step(&q, &[2.0], &cfg).unwrap();
        assert!((out.params[0] - 1.9638).abs() < 1e-14);
        let g0 = meta_gradient(&q, &[2.0], 0.0, true).unwrap();
        assert_eq!(g0.grad[0], 4.0);
        let check = grad_check(&q, &[2.0], 0.1, 1e-5, true).unwrap();
        assert!(check.max_rel_error < 1e-10, "{check:?}");
    }

    #[test]
    fn first_order_drops_the_hessian_term() {
        let q = Quadratic { a: 2.0, b: 3.0, dim: 1 };
        let g = meta_gradient(&q, &[1.0], 0.1, false).unwrap();
        // a φ + b (1 − α a) φ
        assert!((g.grad[0] - (2.0 + 3.0 * 0.8)).abs() < 1e-14);
    }

    #[test]
    fn alpha_zero_reduces_to_joint() {
        let case = GradCheckCase::random(1, 0);
        let obj = case.objective();
        let m = meta_gradient(&obj, &case.params, 0.0, true).unwrap();
        let j = joint_gradient(&obj, &case.params).unwrap();
        assert_eq!(m.grad, j.grad);
        assert_eq!(m.test_loss, j.test_loss);
    }

    #[test]
    fn virtual_train_identities() {
        let case = GradCheckCase::random(2, 1);
        let obj = case.objective();
        let before = case.params.clone();
        let s = virtual_train(&case.params, &case.arch, &obj.vtr, 0.05).unwrap();
        assert_eq!(case.params, before);
        let moved = s.params.axpy(-1.0, &case.params).norm();
        assert!((moved - 0.05 * s.grad.norm()).abs() < 1e-12);
        let same = virtual_train(&case.params, &case.arch, &obj.vtr, 0.0).unwrap();
        assert_eq!(same.params, case.params);
        // vte = vtr, α = 0 -> identical losses
        let l = virtual_test(&same.params, &case.arch, &obj.vtr).unwrap();
        assert!((l - same.loss).abs() < 1e-14);
    }

    #[test]
    fn virtual_test_matches_bce() {
        let arch = Architecture::new(1, vec![1], Activation::Tanh).unwrap();
        let p = [0.5, -0.25, 2.0, 0.1];
        let xs = [[1.0], [-1.0]];
        let batch = Batch::new(xs.iter().map(|x| &x[..]).collect(), vec![1.0, 0.0]);
        // s1 = σ(2 tanh(0.25) + 0.1), s2 = σ(2 tanh(-0.75) + 0.1)
        let s1: f64 = 1.0 / (1.0 + (-(2.0 * 0.25f64.tanh() + 0.1)).exp());
        let s2: f64 = 1.0 / (1.0 + (-(2.0 * (-0.75f64).tanh() + 0.1)).exp());
        let oracle = -(s1.ln() + (1.0 - s2).ln()) / 2.0;
        assert!((virtual_test(&p, &arch, &batch).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn second_order_meta_gradient_matches_finite_differences() {
        for i in 0..6 {
            let case = GradCheckCase::random(11, i);
            let c = case.check(1e-5, true).unwrap();
            assert!(c.max_rel_error < 1e-5, "case {i}: {c:?}");
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, "toy");
        let samples = (0..n)
            .map(|i| {
                let cluster = i % 3;
                let x: Vec<f64> = (0..3).map(|j| if j == cluster { 4.0 } else { 0.0 } + r.random_range(-1.0..1.0)).collect();
                let pred = if r.random::<f64>() < 0.8 { 10.0 } else { 14.0 };
                Sample::new(x, pred, 10.0, cluster, TaskMode::Regression)
            })
            .collect();
        Dataset::new(TaskMode::Regression, samples)
    }

    fn small_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            alpha: 0.1,
            beta: 0.1,
            epochs: 1,
            iterations_per_epoch: 2,
            batch_size: 8,
            n_clusters: 3,
            variant,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn full_variant_alternates() {
        let ds = toy_dataset(200, 0);
        let arch = Architecture::new(3, vec![6, 6], Activation::Tanh).unwrap();
        let out = train(&ds, &arch, &small_config(Variant::Full)).unwrap();
        let kinds: Vec<EpisodeKind> = out.history.records.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![EpisodeKind::Label, EpisodeKind::Input]);
        assert!(out.history.records.iter().all(|r| r.used_virtual_step));
    }

    #[test]
    fn joint_never_takes_a_virtual_step() {
        let ds = toy_dataset(200, 0);
        let arch = Architecture::new(3, vec![6, 6], Activation::Tanh).unwrap();
        let out = train(&ds, &arch, &small_config(Variant::Joint)).unwrap();
        assert!(out.history.records.iter().all(|r| !r.used_virtual_step));
    }

    #[test]
    fn every_variant_runs_and_is_deterministic() {
        let ds = toy_dataset(240, 1);
        let arch = Architecture::new(3, vec![5, 4], Activation::Tanh).unwrap();
        for v in Variant::ALL {
            let cfg = TrainConfig {
                iterations_per_epoch: 4,
                epochs: 2,
                ..small_config(v)
            };
            let a = train(&ds, &arch, &cfg).unwrap();
            let b = train(&ds, &arch, &cfg).unwrap();
            assert_eq!(a.params, b.params, "{v}");
            assert_eq!(a.history, b.history, "{v}");
            assert_eq!(a.history.records.len(), 8);
        }
    }

    #[test]
    fn alpha_zero_meta_equals_joint_training() {
        // α must be positive in a config, so compare single steps directly
        let ds = toy_dataset(200, 3);
        let arch = Architecture::new(3, vec![4, 4], Activation::Tanh).unwrap();
        let p = arch.init_params(&mut rng::stream(0, "init"));
        let episode = EpisodePair {
            vtr: (0..8).collect(),
            vte: (8..16).collect(),
            provenance: Provenance::Label {
                sampled_percentage: 0.5,
                target_correct: 4,
                realized_correct: 4,
                realized_fraction: 0.5,
                shortfall: false,
            },
        };
        let obj = EpisodeObjective::new(&arch, &ds, &episode);
        let cfg = TrainConfig { beta: 0.3, ..TrainConfig::default() };
        let mut m_cfg = cfg.clone();
        m_cfg.alpha = 0.0;
        let g = meta_gradient(&obj, &p, 0.0, true).unwrap();
        let meta = apply_update(&p, &g.grad, &m_cfg).unwrap();
        let joint = joint_step(&obj, &p, &cfg).unwrap();
        assert_eq!(meta, joint.params);
    }

    #[test]
    fn pool_violations_fail_before_training() {
        let ds = toy_dataset(30, 0);
        let arch = Architecture::new(3, vec![4], Activation::Tanh).unwrap();
        let cfg = TrainConfig { batch_size: 16, ..small_config(Variant::Full) };
        assert!(matches!(train(&ds, &arch, &cfg), Err(Error::Config(_))));
        let cfg = TrainConfig { batch_size: 7, ..small_config(Variant::Full) };
        // 15 → c1 = 9, c2 = 6 < 7
        assert!(matches!(train(&ds, &arch, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn relu_with_second_order_is_rejected() {
        let ds = toy_dataset(200, 0);
        let arch = Architecture::new(3, vec![4], Activation::Relu).unwrap();
        assert!(matches!(train(&ds, &arch, &small_config(Variant::Full)), Err(Error::Config(_))));
        let cfg = TrainConfig { second_order: false, ..small_config(Variant::Full) };
        assert!(train(&ds, &arch, &cfg).is_ok());
    }

    #[test]
    fn history_round_trips_through_jsonl() {
        let ds = toy_dataset(200, 0);
        let arch = Architecture::new(3, vec![4, 4], Activation::Tanh).unwrap();
        let out = train(&ds, &arch, &small_config(Variant::Full)).unwrap();
        let text = out.history.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(TrainHistory::from_jsonl(&text).unwrap(), out.history);
    }
}
