//! Lloyd's k-means with k-means++ seeding.
//!
//! Deterministic for a given rng state. Clusters that become empty are
//! re-seeded with the point farthest from its own centroid; a cluster is left
//! empty only when every point already coincides with its centroid (fewer
//! distinct points than clusters).

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seeds<V: AsRef<[f64]>>(points: &[V], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            // guard the rounding tail: never pick a zero-weight point
            while d2[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign<V: AsRef<[f64]>>(points: &[V], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(p.as_ref(), centroids).0).collect()
}

fn update_centroids<V: AsRef<[f64]>>(points: &[V], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

/// Moves the farthest point into each empty cluster. Returns whether anything moved.
fn reseed_empty<V: AsRef<[f64]>>(points: &[V], assignments: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut moved = false;
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return moved;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(p.as_ref(), &centroids[a]);
            if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else {
            return moved;
        };
        assignments[i] = empty;
        centroids[empty] = points[i].as_ref().to_vec();
        moved = true;
    }
}

pub fn kmeans<V: AsRef<[f64]>>(points: &[V], k: usize, rng: &mut Rng) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::config("number of clusters must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::config(format!(
            "k-means needs at least {k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::config("k-means points have inconsistent dimensions"));
    }
    if points.iter().any(|p| p.as_ref().iter().any(|x| !x.is_finite())) {
        return Err(Error::numerical("non-finite k-means input"));
    }

    let mut centroids = plus_plus_seeds(points, k, rng);
    let mut assignments = assign(points, &centroids);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let reseeded = reseed_empty(points, &mut assignments, &mut centroids);
        update_centroids(points, &assignments, &mut centroids);
        let next = assign(points, &centroids);
        if next == assignments && !reseeded {
            converged = true;
            break;
        }
        assignments = next;
    }
    Ok(KMeans {
        assignments,
        centroids,
        iterations,
        converged,
    })
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }

    /// Within-cluster sum of squared distances.
    pub fn inertia<V: AsRef<[f64]>>(&self, points: &[V]) -> f64 {
        points
            .iter()
            .zip(&self.assignments)
            .map(|(p, &a)| sq_dist(p.as_ref(), &self.centroids[a]))
            .sum()
    }

    /// True when every centroid is the mean of its members and no point is
    /// strictly closer to another centroid than to its own.
    pub fn is_lloyd_fixed_point<V: AsRef<[f64]>>(&self, points: &[V]) -> bool {
        let mut means = self.centroids.clone();
        update_centroids(points, &self.assignments, &mut means);
        let tol = 1e-9;
        let centroids_ok = means.iter().zip(&self.centroids).all(|(m, c)| {
            m.iter()
                .zip(c)
                .all(|(a, b)| (a - b).abs() <= tol * (1.0 + b.abs()))
        });
        let assignments_ok = points.iter().zip(&self.assignments).all(|(p, &a)| {
            let own = sq_dist(p.as_ref(), &self.centroids[a]);
            let (_, best) = nearest(p.as_ref(), &self.centroids);
            own <= best * (1.0 + 1e-12) + 1e-300
        });
        centroids_ok && assignments_ok
    }
}
