//! Construction of virtual training / virtual testing set pairs.
//!
//! At the start of every epoch the training set is split in half. One half
//! (the correctness pool) is split again into a part that feeds virtual
//! training batches and a part, grouped by correctness label, that feeds
//! virtual testing batches with a freshly drawn share of correct samples. The
//! other half (the input pool) is clustered on the estimator's hidden-layer
//! statistics; one cluster feeds virtual training and a different cluster
//! feeds virtual testing.
//!
//! Episodes refer to samples by their index in the training [`Dataset`].

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeans};
use crate::model::{feature_stats, Architecture};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Label {
        /// Sampled target share of correct predictions in the virtual test set.
        sampled_percentage: f64,
        target_correct: usize,
        realized_correct: usize,
        realized_fraction: f64,
        /// A class pool ran short and the other class filled the gap.
        shortfall: bool,
    },
    Input {
        train_cluster: usize,
        test_cluster: usize,
        train_with_replacement: bool,
        test_with_replacement: bool,
    },
}

impl Provenance {
    pub fn kind(&self) -> EpisodeKind {
        match self {
            Provenance::Label { .. } => EpisodeKind::Label,
            Provenance::Input { .. } => EpisodeKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Label,
    Input,
    /// Plain minibatch step, used by the baseline trainers.
    Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePair {
    pub vtr: Vec<usize>,
    pub vte: Vec<usize>,
    pub provenance: Provenance,
}

/// Round half up of `x`, for non-negative `x`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Uniformly random halving of `0..n` (sizes differ by at most one).
pub fn epoch_split(n: usize, batch_size: usize, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 * batch_size || n < 2 {
        return Err(Error::config(format!(
            "dataset of {n} samples is too small to halve into batches of {batch_size}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let second = idx.split_off(n / 2);
    Ok((idx, second))
}

/// The correctness half of an epoch: a pool for virtual training batches and
/// the virtual-testing pool grouped by cached correctness label.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessPools {
    pub train_pool: Vec<usize>,
    pub test_correct: Vec<usize>,
    pub test_incorrect: Vec<usize>,
}

impl CorrectnessPools {
    pub fn test_pool_len(&self) -> usize {
        self.test_correct.len() + self.test_incorrect.len()
    }
}

pub fn split_correctness_pools(
    dataset: &Dataset,
    pool: &[usize],
    fraction: f64,
    rng: &mut Rng,
) -> Result<CorrectnessPools> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("c1_fraction {fraction} must lie in (0, 1)")));
    }
    if pool.is_empty() {
        return Err(Error::config("empty correctness pool"));
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    let n1 = round_half_up(fraction * pool.len() as f64);
    if n1 == 0 || n1 == pool.len() {
        return Err(Error::config(format!(
            "c1_fraction {fraction} leaves an empty subset of a {}-sample pool",
            pool.len()
        )));
    }
    let test = shuffled.split_off(n1);
    let (test_correct, test_incorrect) = test.into_iter().partition(|&i| dataset.samples[i].correct);
    Ok(CorrectnessPools {
        train_pool: shuffled,
        test_correct,
        test_incorrect,
    })
}

fn sample_without_replacement(pool: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

fn sample_with_replacement(pool: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Draws `k` members, with replacement only when the pool is too small.
/// Returns the batch and whether replacement was needed.
fn draw_batch(pool: &[usize], k: usize, rng: &mut Rng) -> (Vec<usize>, bool) {
    if pool.len() >= k {
        (sample_without_replacement(pool, k, rng), false)
    } else {
        (sample_with_replacement(pool, k, rng), true)
    }
}

/// Label episode with a freshly drawn correct share `p ~ U[0, 1]`.
pub fn build_label_episode(pools: &CorrectnessPools, batch_size: usize, rng: &mut Rng) -> Result<EpisodePair> {
    let p: f64 = rng.random();
    build_label_episode_at(pools, batch_size, p, rng)
}

/// Label episode for a given correct share `p`: the virtual test set holds
/// `round_half_up(p · batch_size)` correct samples and the rest incorrect,
/// drawn without replacement inside each class.
pub fn build_label_episode_at(
    pools: &CorrectnessPools,
    batch_size: usize,
    p: f64,
    rng: &mut Rng,
) -> Result<EpisodePair> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("correct share {p} outside [0, 1]")));
    }
    if pools.train_pool.len() < batch_size {
        return Err(Error::config(format!(
            "virtual-training pool has {} samples, fewer than batch_size {batch_size}",
            pools.train_pool.len()
        )));
    }
    if pools.test_pool_len() < batch_size {
        return Err(Error::config(format!(
            "virtual-testing pool has {} samples, fewer than batch_size {batch_size}",
            pools.test_pool_len()
        )));
    }
    let vtr = sample_without_replacement(&pools.train_pool, batch_size, rng);

    let target = round_half_up(p * batch_size as f64).min(batch_size);
    let mut n_correct = target.min(pools.test_correct.len());
    let n_incorrect = (batch_size - n_correct).min(pools.test_incorrect.len());
    // backfill a short incorrect pool with correct samples
    n_correct = n_correct.max(batch_size - n_incorrect);
    let shortfall = n_correct != target;

    let mut vte = sample_without_replacement(&pools.test_correct, n_correct, rng);
    vte.extend(sample_without_replacement(&pools.test_incorrect, n_incorrect, rng));
    vte.shuffle(rng);

    Ok(EpisodePair {
        vtr,
        vte,
        provenance: Provenance::Label {
            sampled_percentage: p,
            target_correct: target,
            realized_correct: n_correct,
            realized_fraction: n_correct as f64 / batch_size as f64,
            shortfall,
        },
    })
}

/// The input half of an epoch, clustered on feature statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPools {
    /// Dataset indices of each cluster's members.
    pub clusters: Vec<Vec<usize>>,
    /// Cluster id per input-pool sample, in input-pool order.
    pub assignments: Vec<usize>,
    pub selected_cluster: usize,
    pub kmeans_converged: bool,
}

impl InputPools {
    pub fn nonempty_clusters(&self) -> Vec<usize> {
        (0..self.clusters.len()).filter(|&c| !self.clusters[c].is_empty()).collect()
    }

    /// Groups `pool` by precomputed assignments and picks the training cluster.
    pub fn from_assignments(pool: &[usize], km: &KMeans, rng: &mut Rng) -> Result<Self> {
        let mut clusters = vec![Vec::new(); km.k()];
        for (&i, &a) in pool.iter().zip(&km.assignments) {
            clusters[a].push(i);
        }
        let nonempty: Vec<usize> = (0..clusters.len()).filter(|&c| !clusters[c].is_empty()).collect();
        let selected_cluster = *nonempty
            .get(rng.random_range(0..nonempty.len()))
            .ok_or_else(|| Error::config("clustering produced no nonempty cluster"))?;
        Ok(Self {
            clusters,
            assignments: km.assignments.clone(),
            selected_cluster,
            kmeans_converged: km.converged,
        })
    }
}

/// Hidden-layer statistics of every pool sample under the current parameters.
pub fn pool_feature_stats(
    dataset: &Dataset,
    pool: &[usize],
    params: &[f64],
    arch: &Architecture,
) -> Result<Vec<Vec<f64>>> {
    pool.iter()
        .map(|&i| feature_stats(params, arch, &dataset.samples[i].input).map(|s| s.0))
        .collect()
}

/// Clusters the input pool into `n_clusters` groups on feature statistics
/// computed with the current estimator parameters, then selects one nonempty
/// cluster uniformly as the virtual-training cluster for the epoch.
pub fn cluster_input_pool(
    dataset: &Dataset,
    pool: &[usize],
    params: &[f64],
    arch: &Architecture,
    n_clusters: usize,
    rng: &mut Rng,
) -> Result<InputPools> {
    let stats = pool_feature_stats(dataset, pool, params, arch)?;
    let km = kmeans(&stats, n_clusters, rng)?;
    InputPools::from_assignments(pool, &km, rng)
}

/// Input episode: virtual training batch from the selected cluster, virtual
/// testing batch from a different nonempty cluster chosen uniformly. A cluster
/// smaller than the batch is sampled with replacement.
pub fn build_input_episode(pools: &InputPools, batch_size: usize, rng: &mut Rng) -> Result<EpisodePair> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let train_cluster = pools.selected_cluster;
    let others: Vec<usize> = pools
        .nonempty_clusters()
        .into_iter()
        .filter(|&c| c != train_cluster)
        .collect();
    if others.is_empty() {
        return Err(Error::config(
            "input episode needs a second nonempty cluster; feature statistics collapsed to one cluster",
        ));
    }
    let test_cluster = others[rng.random_range(0..others.len())];
    let (vtr, train_with_replacement) = draw_batch(&pools.clusters[train_cluster], batch_size, rng);
    let (vte, test_with_replacement) = draw_batch(&pools.clusters[test_cluster], batch_size, rng);
    Ok(EpisodePair {
        vtr,
        vte,
        provenance: Provenance::Input {
            train_cluster,
            test_cluster,
            train_with_replacement,
            test_with_replacement,
        },
    })
}
