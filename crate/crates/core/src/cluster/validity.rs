//! Cluster validity indices and the majority vote over them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sq_dist, ClusterAssignment, PointSet};
use crate::error::{Error, Result};

/// Hartigan's rule of thumb: the first k whose statistic drops below this.
pub const HARTIGAN_THRESHOLD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidityIndex {
    CalinskiHarabasz,
    Silhouette,
    DaviesBouldin,
    Dunn,
    Hartigan,
}

impl ValidityIndex {
    pub const ALL: [ValidityIndex; 5] = [
        ValidityIndex::CalinskiHarabasz,
        ValidityIndex::Silhouette,
        ValidityIndex::DaviesBouldin,
        ValidityIndex::Dunn,
        ValidityIndex::Hartigan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ValidityIndex::CalinskiHarabasz => "calinski_harabasz",
            ValidityIndex::Silhouette => "silhouette",
            ValidityIndex::DaviesBouldin => "davies_bouldin",
            ValidityIndex::Dunn => "dunn",
            ValidityIndex::Hartigan => "hartigan",
        }
    }
}

impl fmt::Display for ValidityIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ValidityIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "ch" | "calinski_harabasz" => Ok(ValidityIndex::CalinskiHarabasz),
            "silhouette" => Ok(ValidityIndex::Silhouette),
            "db" | "davies_bouldin" => Ok(ValidityIndex::DaviesBouldin),
            "dunn" => Ok(ValidityIndex::Dunn),
            "hartigan" => Ok(ValidityIndex::Hartigan),
            _ => Err(Error::InvalidConfig(format!("unknown validity index `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    /// One value per index of the suite; `None` where undefined.
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KVoteTable {
    pub suite: Vec<ValidityIndex>,
    /// Ascending k.
    pub rows: Vec<KRow>,
    /// The k each index voted for, aligned with `suite`.
    pub votes: Vec<Option<usize>>,
    /// k values left out of voting.
    pub excluded: Vec<usize>,
    pub winner: Option<usize>,
}

impl KVoteTable {
    pub fn value(&self, index: ValidityIndex, k: usize) -> Option<f64> {
        let col = self.suite.iter().position(|&i| i == index)?;
        self.rows.iter().find(|r| r.k == k)?.values[col]
    }

    pub fn vote(&self, index: ValidityIndex) -> Option<usize> {
        let col = self.suite.iter().position(|&i| i == index)?;
        self.votes[col]
    }
}

/// Most-voted k; ties go to the smallest k.
pub fn majority_vote(votes: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut counts = BTreeMap::<usize, usize>::new();
    for k in votes {
        *counts.entry(k).or_insert(0) += 1;
    }
    let max = *counts.values().max()?;
    counts.into_iter().find(|&(_, c)| c == max).map(|(k, _)| k)
}

pub fn select_k_majority(table: &KVoteTable) -> Result<usize> {
    majority_vote(table.votes.iter().flatten().copied()).ok_or(Error::NoVotes)
}

struct PairStats {
    silhouette: f64,
    min_between: f64,
    max_within: f64,
}

/// Silhouette contributions and Dunn extremes for point `i`, for each assignment.
fn point_pair_stats(
    points: &PointSet,
    assignments: &[&ClusterAssignment],
    sizes: &[Vec<usize>],
    i: usize,
) -> Vec<PairStats> {
    let xi = points.row(i);
    let mut sums: Vec<Vec<f64>> = assignments.iter().map(|a| vec![0.0; a.k]).collect();
    let mut min_between = vec![f64::INFINITY; assignments.len()];
    let mut max_within = vec![0.0f64; assignments.len()];
    for (j, xj) in points.rows().enumerate() {
        if j == i {
            continue;
        }
        let d = sq_dist(xi, xj).sqrt();
        for (t, a) in assignments.iter().enumerate() {
            let lj = a.labels[j];
            sums[t][lj] += d;
            if lj == a.labels[i] {
                max_within[t] = max_within[t].max(d);
            } else {
                min_between[t] = min_between[t].min(d);
            }
        }
    }
    assignments
        .iter()
        .enumerate()
        .map(|(t, a)| {
            let own = a.labels[i];
            let silhouette = if sizes[t][own] <= 1 {
                0.0
            } else {
                let within = sums[t][own] / (sizes[t][own] - 1) as f64;
                let between = (0..a.k)
                    .filter(|&c| c != own && sizes[t][c] > 0)
                    .map(|c| sums[t][c] / sizes[t][c] as f64)
                    .fold(f64::INFINITY, f64::min);
                let denom = within.max(between);
                if denom > 0.0 && denom.is_finite() {
                    (between - within) / denom
                } else {
                    0.0
                }
            };
            PairStats { silhouette, min_between: min_between[t], max_within: max_within[t] }
        })
        .collect()
}

fn calinski_harabasz(points: &PointSet, a: &ClusterAssignment, sizes: &[usize]) -> Option<f64> {
    let n = points.len();
    if a.k < 2 || n <= a.k {
        return None;
    }
    let dim = points.dim();
    let mut grand = vec![0.0; dim];
    for x in points.rows() {
        grand.iter_mut().zip(x).for_each(|(g, v)| *g += v);
    }
    grand.iter_mut().for_each(|g| *g /= n as f64);
    let between: f64 = a.centroids.iter().zip(sizes).map(|(c, &s)| s as f64 * sq_dist(c, &grand)).sum();
    let within = a.inertia;
    if within == 0.0 {
        return Some(f64::INFINITY);
    }
    Some((between / (a.k - 1) as f64) / (within / (n - a.k) as f64))
}

fn davies_bouldin(points: &PointSet, a: &ClusterAssignment, sizes: &[usize]) -> Option<f64> {
    if a.k < 2 {
        return None;
    }
    let mut scatter = vec![0.0; a.k];
    for (x, &l) in points.rows().zip(&a.labels) {
        scatter[l] += sq_dist(x, &a.centroids[l]).sqrt();
    }
    for (s, &n) in scatter.iter_mut().zip(sizes) {
        *s /= n as f64;
    }
    let total: f64 = (0..a.k)
        .map(|i| {
            (0..a.k)
                .filter(|&j| j != i)
                .map(|j| {
                    let sep = sq_dist(&a.centroids[i], &a.centroids[j]).sqrt();
                    if sep > 0.0 {
                        (scatter[i] + scatter[j]) / sep
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Some(total / a.k as f64)
}

/// Computes the index suite for each assignment and records each index's vote.
///
/// Calinski–Harabasz, silhouette and Dunn vote for their maximum,
/// Davies–Bouldin for its minimum, and Hartigan for the first k whose
/// statistic `(W_k / W_{k+1} - 1)(n - k - 1)` is below
/// [`HARTIGAN_THRESHOLD`]. Assignments with an empty cluster are excluded.
pub fn compute_validity_indices(
    points: &PointSet,
    assignments: &[ClusterAssignment],
    suite: &[ValidityIndex],
) -> Result<KVoteTable> {
    let mut ks: Vec<usize> = assignments.iter().map(|a| a.k).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 2 {
        return Err(Error::InvalidConfig(format!("k scan needs at least two values, got {ks:?}")));
    }
    if suite.is_empty() {
        return Err(Error::InvalidConfig("validity index suite is empty".into()));
    }

    let mut excluded = Vec::new();
    let mut kept: Vec<&ClusterAssignment> = Vec::new();
    for &k in &ks {
        let a = assignments.iter().find(|a| a.k == k).expect("k from assignments");
        if a.labels.len() != points.len() {
            return Err(Error::LabelMismatch(format!(
                "k = {k}: {} labels for {} points",
                a.labels.len(),
                points.len()
            )));
        }
        if a.sizes().contains(&0) {
            warn!("k = {k} has an empty cluster; excluded from voting");
            excluded.push(k);
        } else {
            kept.push(a);
        }
    }
    let sizes: Vec<Vec<usize>> = kept.iter().map(|a| a.sizes()).collect();

    let needs_pairs = suite.iter().any(|i| matches!(i, ValidityIndex::Silhouette | ValidityIndex::Dunn));
    let pair_stats: Vec<Vec<PairStats>> = if needs_pairs {
        (0..points.len()).into_par_iter().map(|i| point_pair_stats(points, &kept, &sizes, i)).collect()
    } else {
        Vec::new()
    };

    let n = points.len();
    let mut rows = Vec::with_capacity(kept.len());
    for (t, a) in kept.iter().enumerate() {
        let values = suite
            .iter()
            .map(|index| match index {
                ValidityIndex::CalinskiHarabasz => calinski_harabasz(points, a, &sizes[t]),
                ValidityIndex::DaviesBouldin => davies_bouldin(points, a, &sizes[t]),
                ValidityIndex::Silhouette => {
                    (a.k >= 2 && n > a.k).then(|| pair_stats.iter().map(|p| p[t].silhouette).sum::<f64>() / n as f64)
                }
                ValidityIndex::Dunn => {
                    if a.k < 2 {
                        return None;
                    }
                    let between = pair_stats.iter().map(|p| p[t].min_between).fold(f64::INFINITY, f64::min);
                    let within = pair_stats.iter().map(|p| p[t].max_within).fold(0.0, f64::max);
                    Some(if within > 0.0 { between / within } else { f64::INFINITY })
                }
                ValidityIndex::Hartigan => {
                    let next = kept.iter().find(|b| b.k == a.k + 1)?;
                    if next.inertia == 0.0 {
                        return Some(f64::INFINITY);
                    }
                    Some((a.inertia / next.inertia - 1.0) * (n as f64 - a.k as f64 - 1.0))
                }
            })
            .collect();
        rows.push(KRow { k: a.k, values });
    }

    let votes: Vec<Option<usize>> = suite
        .iter()
        .enumerate()
        .map(|(col, index)| {
            let defined = rows.iter().filter_map(|r| r.values[col].map(|v| (r.k, v)));
            match index {
                ValidityIndex::Hartigan => defined.filter(|&(_, v)| v < HARTIGAN_THRESHOLD).map(|(k, _)| k).next(),
                ValidityIndex::DaviesBouldin => defined
                    .fold(None, |best: Option<(usize, f64)>, (k, v)| match best {
                        Some((_, b)) if v >= b => best,
                        _ => Some((k, v)),
                    })
                    .map(|(k, _)| k),
                _ => defined
                    .fold(None, |best: Option<(usize, f64)>, (k, v)| match best {
                        Some((_, b)) if v <= b => best,
                        _ => Some((k, v)),
                    })
                    .map(|(k, _)| k),
            }
        })
        .collect();

    let winner = majority_vote(votes.iter().flatten().copied());
    Ok(KVoteTable { suite: suite.to_vec(), rows, votes, excluded, winner })
}
