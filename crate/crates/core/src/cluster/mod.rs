//! K-means in contribution space with majority-rule selection of k.

mod kmeans;
mod validity;

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpret::ContributionVector;

pub use kmeans::{kmeans_fit, ClusterAssignment, KMeansAlgorithm, KMeansConfig};
pub use validity::{
    compute_validity_indices, majority_vote, select_k_majority, KRow, KVoteTable, ValidityIndex, HARTIGAN_THRESHOLD,
};

/// Dense row-major points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { feature: pos % dim });
        }
        Ok(PointSet { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParams("ragged point rows".into()));
        }
        Self::new(rows.concat(), dim)
    }

    /// Contribution coordinates (bias and prediction excluded).
    pub fn from_contributions(rows: &[ContributionVector]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.contributions.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.contributions.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.contributions.len() });
            }
            data.extend_from_slice(&r.contributions);
        }
        Self::new(data, dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Column-wise z-scores; constant columns become all zero.
    pub fn standardized(&self) -> PointSet {
        let n = self.len() as f64;
        let mut out = self.data.clone();
        for j in 0..self.dim {
            let mean = self.rows().map(|r| r[j]).sum::<f64>() / n;
            let var = self.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for i in 0..self.len() {
                let v = &mut out[i * self.dim + j];
                *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
            }
        }
        PointSet { dim: self.dim, data: out }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fits every k in `ks`; a k that fails is dropped with a warning.
pub fn scan_k(
    points: &PointSet,
    ks: &[usize],
    seed: u64,
    cfg: &KMeansConfig,
) -> (Vec<ClusterAssignment>, Vec<(usize, String)>) {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut fits = Vec::new();
    let mut failed = Vec::new();
    for k in ks {
        match kmeans_fit(points, k, seed, cfg) {
            Ok(a) => fits.push(a),
            Err(e) => {
                warn!("k = {k} excluded from the scan: {e}");
                failed.push((k, e.to_string()));
            }
        }
    }
    (fits, failed)
}

/// Scan, vote and return the winning assignment together with the vote table.
pub fn cluster_with_majority_rule(
    points: &PointSet,
    ks: &[usize],
    suite: &[ValidityIndex],
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<(ClusterAssignment, KVoteTable)> {
    let (fits, failed) = scan_k(points, ks, seed, cfg);
    let mut table = compute_validity_indices(points, &fits, suite)?;
    table.excluded.extend(failed.iter().map(|(k, _)| *k));
    table.excluded.sort_unstable();
    let k = select_k_majority(&table)?;
    let chosen = fits.into_iter().find(|a| a.k == k).expect("winner was fitted");
    Ok((chosen, table))
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = (0..ka).map(|i| c2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

pub fn write_assignments_csv(path: &Path, obs_index: &[usize], assignment: &ClusterAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["obs_index", "cluster"])?;
    for (i, &label) in obs_index.iter().zip(&assignment.labels) {
        w.write_record([i.to_string(), label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Returns (obs_index, cluster) pairs in file order.
pub fn read_assignments_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec.get(i)
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| Error::InvalidConfig(format!("{}: bad assignment row", path.display())))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Columns: `k`, one per index, `votes`, `selected`, `excluded`.
pub fn write_vote_table_csv(path: &Path, table: &KVoteTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string()];
    header.extend(table.suite.iter().map(|i| i.name().to_string()));
    header.extend(["votes", "selected", "excluded"].map(String::from));
    w.write_record(&header)?;
    let mut ks: Vec<usize> = table.rows.iter().map(|r| r.k).chain(table.excluded.iter().copied()).collect();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let mut rec = vec![k.to_string()];
        match table.rows.iter().find(|r| r.k == k) {
            Some(row) => rec.extend(row.values.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default())),
            None => rec.extend(table.suite.iter().map(|_| String::new())),
        }
        rec.push(table.votes.iter().filter(|v| **v == Some(k)).count().to_string());
        rec.push(u8::from(table.winner == Some(k)).to_string());
        rec.push(u8::from(table.excluded.contains(&k)).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub inertia: f64,
    pub sizes: Vec<usize>,
}

impl From<&ClusterAssignment> for ClusterSummary {
    fn from(a: &ClusterAssignment) -> Self {
        ClusterSummary { k: a.k, inertia: a.inertia, sizes: a.sizes() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(ari < 0.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 0, 0]), 1.0);
    }

    #[test]
    fn standardize_unit_variance() {
        let p = PointSet::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let z = p.standardized();
        let col: Vec<f64> = z.rows().map(|r| r[0]).collect();
        assert!((col.iter().sum::<f64>()).abs() < 1e-12);
        assert!((col.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        assert!(z.rows().all(|r| r[1] == 0.0));
    }

    #[test]
    fn rejects_non_finite_points() {
        assert!(PointSet::new(vec![1.0, f64::NAN], 2).is_err());
        assert!(PointSet::new(vec![1.0, 2.0, 3.0], 2).is_err());
    }
}
