use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sq_dist, PointSet};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMeansAlgorithm {
    /// Single-point transfers that lower the within-cluster sum of squares.
    #[default]
    HartiganWong,
    Lloyd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    /// Cap on passes over the data per restart.
    pub max_iter: usize,
    pub algorithm: KMeansAlgorithm,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { restarts: 25, max_iter: 300, algorithm: KMeansAlgorithm::HartiganWong }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Total within-cluster sum of squared distances.
    pub inertia: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Restart that produced this result.
    pub best_restart: usize,
    /// Inertia after initial assignment and after each pass, one list per restart.
    pub traces: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    trace: Vec<f64>,
}

/// Best of `cfg.restarts` k-means++ seeded runs.
pub fn kmeans_fit(points: &PointSet, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::TooFewPoints { k, n });
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    let runs: Vec<Run> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, Purpose::KMeans, ((k as u64) << 32) | r as u64);
            single_run(points, k, &mut rng, cfg)
        })
        .collect::<Result<_>>()?;

    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].inertia.total_cmp(&runs[b].inertia).then(a.cmp(&b)))
        .expect("at least one restart");
    let traces = runs.iter().map(|r| r.trace.clone()).collect();
    let Run { labels, centroids, inertia, .. } = runs.into_iter().nth(best).expect("index in range");
    Ok(ClusterAssignment { k, labels, centroids, inertia, seed, restarts: cfg.restarts, best_restart: best, traces })
}

fn single_run(points: &PointSet, k: usize, rng: &mut ChaCha8Rng, cfg: &KMeansConfig) -> Result<Run> {
    let centers = kmeans_pp(points, k, rng)?;
    let mut labels: Vec<usize> = points.rows().map(|x| nearest(x, &centers).0).collect();
    let mut centroids = recompute_centroids(points, &labels, k);
    let mut trace = vec![inertia(points, &labels, &centroids)];
    match cfg.algorithm {
        KMeansAlgorithm::HartiganWong => hartigan_wong(points, &mut labels, &mut centroids, cfg.max_iter, &mut trace),
        KMeansAlgorithm::Lloyd => lloyd(points, &mut labels, &mut centroids, cfg.max_iter, &mut trace),
    }
    let inertia = *trace.last().expect("trace non-empty");
    Ok(Run { labels, centroids, inertia, trace })
}

/// D²-weighted seeding. Fails when fewer than `k` distinct points exist.
fn kmeans_pp(points: &PointSet, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let first = rng.random_range(0..n);
    let mut centers = vec![points.row(first).to_vec()];
    let mut d2: Vec<f64> = points.rows().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::DegenerateClusters { k });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let c = points.row(pick.expect("positive mass")).to_vec();
        for (i, x) in points.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    Ok(centers)
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn recompute_centroids(points: &PointSet, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; points.dim()]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in points.rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

pub(crate) fn inertia(points: &PointSet, labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.rows().zip(labels).map(|(x, &l)| sq_dist(x, &centroids[l])).sum()
}

/// Relative margin a transfer must clear, so that rounding never admits a
/// move that raises the objective.
const TRANSFER_MARGIN: f64 = 1e-10;

/// Repeated passes of single-point transfers. Moving `x` from cluster `a`
/// (size `n_a`) to `b` changes the objective by
/// `n_b/(n_b+1)·|x-c_b|² - n_a/(n_a-1)·|x-c_a|²`; the best negative change
/// is applied immediately and both centroids are updated in place.
fn hartigan_wong(
    points: &PointSet,
    labels: &mut [usize],
    centroids: &mut [Vec<f64>],
    max_iter: usize,
    trace: &mut Vec<f64>,
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for _ in 0..max_iter {
        let mut moved = 0;
        for (i, x) in points.rows().enumerate() {
            let a = labels[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(x, &centroids[a]);
            let mut best = None;
            let mut best_cost = removal * (1.0 - TRANSFER_MARGIN);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let cost = nb / (nb + 1.0) * sq_dist(x, &centroids[b]);
                if cost < best_cost {
                    best_cost = cost;
                    best = Some(b);
                }
            }
            if let Some(b) = best {
                let nb = counts[b] as f64;
                for (c, v) in centroids[a].iter_mut().zip(x) {
                    *c = (na * *c - v) / (na - 1.0);
                }
                for (c, v) in centroids[b].iter_mut().zip(x) {
                    *c = (nb * *c + v) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                labels[i] = b;
                moved += 1;
            }
        }
        if moved == 0 {
            break;
        }
        // Drop accumulated drift from the in-place updates.
        let exact = recompute_centroids(points, labels, k);
        centroids.clone_from_slice(&exact);
        trace.push(inertia(points, labels, centroids));
    }
}

fn lloyd(
    points: &PointSet,
    labels: &mut [usize],
    centroids: &mut Vec<Vec<f64>>,
    max_iter: usize,
    trace: &mut Vec<f64>,
) {
    let k = centroids.len();
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, x) in points.rows().enumerate() {
            let (j, _) = nearest(x, centroids);
            if j != labels[i] {
                labels[i] = j;
                changed = true;
            }
        }
        // Refill empty clusters with the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(points.row(a), &centroids[labels[a]])
                        .total_cmp(&sq_dist(points.row(b), &centroids[labels[b]]))
                        .then(b.cmp(&a))
                })
                .expect("k <= n");
            counts[labels[far]] -= 1;
            labels[far] = empty;
            counts[empty] = 1;
            changed = true;
        }
        *centroids = recompute_centroids(points, labels, k);
        if !changed {
            break;
        }
        trace.push(inertia(points, labels, centroids));
    }
}
