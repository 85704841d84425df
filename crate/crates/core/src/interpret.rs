//! Additive decomposition of forest predictions into a bias and per-feature
//! contributions.
//!
//! For one tree, the bias is the root mean and every step of the
//! root-to-leaf path from node `u` to child `v` credits
//! `mean(v) - mean(u)` to the feature `u` split on. The sum telescopes, so
//! `bias + sum(contributions) == leaf mean`. Forest values are plain means
//! over trees.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{check_input, FittedForest, RegressionTree, TrainingData};
use crate::panel::BankObservation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub obs_index: usize,
    pub bias: f64,
    pub contributions: Vec<f64>,
    pub prediction: f64,
}

impl ContributionVector {
    pub fn contribution_sum(&self) -> f64 {
        self.contributions.iter().sum()
    }

    /// `prediction - bias - sum(contributions)`.
    pub fn residual(&self) -> f64 {
        self.prediction - self.bias - self.contribution_sum()
    }
}

/// Which trees decompose a training row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecompositionMode {
    /// Every tree, on the rows the forest was fitted on.
    #[default]
    InSample,
    /// Only trees whose bootstrap sample excluded the row.
    OutOfBag,
}

/// Single-tree decomposition; adds contributions into `out`, returns (bias, leaf mean).
pub fn decompose_tree_into(tree: &RegressionTree, x: &[f64], out: &mut [f64]) -> (f64, f64) {
    let leaf = tree.walk_path(x, |parent, child| {
        let f = parent.feature.expect("internal node");
        out[f] += child.mean - parent.mean;
    });
    (tree.root().mean, leaf.mean)
}

/// Per-tree decomposition as a vector, for inspection and invariant checks.
pub fn decompose_tree(tree: &RegressionTree, x: &[f64]) -> ContributionVector {
    let mut contributions = vec![0.0; x.len()];
    let (bias, prediction) = decompose_tree_into(tree, x, &mut contributions);
    ContributionVector { obs_index: 0, bias, contributions, prediction }
}

fn decompose_with<'a>(x: &[f64], trees: impl Iterator<Item = &'a RegressionTree>) -> Option<ContributionVector> {
    let mut contributions = vec![0.0; x.len()];
    let (mut bias, mut prediction, mut n) = (0.0, 0.0, 0usize);
    for tree in trees {
        let (b, leaf) = decompose_tree_into(tree, x, &mut contributions);
        bias += b;
        prediction += leaf;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let n = n as f64;
    contributions.iter_mut().for_each(|c| *c /= n);
    Some(ContributionVector { obs_index: 0, bias: bias / n, contributions, prediction: prediction / n })
}

/// Forest-averaged decomposition of one observation.
pub fn decompose_observation(forest: &FittedForest, x: &[f64]) -> Result<ContributionVector> {
    check_input(forest, x)?;
    decompose_with(x, forest.trees.iter()).ok_or(Error::EmptyForest)
}

/// One decomposition per row, in row order.
pub fn contribution_matrix(forest: &FittedForest, data: &TrainingData) -> Result<Vec<ContributionVector>> {
    contribution_matrix_with(forest, data, DecompositionMode::InSample)
}

pub fn contribution_matrix_with(
    forest: &FittedForest,
    data: &TrainingData,
    mode: DecompositionMode,
) -> Result<Vec<ContributionVector>> {
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    match mode {
        DecompositionMode::InSample => (0..data.len())
            .into_par_iter()
            .map(|i| {
                let mut v = decompose_observation(forest, data.row(i))?;
                v.obs_index = i;
                Ok(v)
            })
            .collect(),
        DecompositionMode::OutOfBag => {
            forest.check_training(data)?;
            if forest.trees.is_empty() {
                return Err(Error::EmptyForest);
            }
            let masks: Vec<Vec<bool>> = (0..forest.trees.len()).into_par_iter().map(|t| forest.in_bag(t)).collect();
            (0..data.len())
                .into_par_iter()
                .map(|i| {
                    let x = data.row(i);
                    check_input(forest, x)?;
                    let trees = forest.trees.iter().zip(&masks).filter(|(_, m)| !m[i]).map(|(t, _)| t);
                    let mut v = decompose_with(x, trees).ok_or(Error::NoOutOfBag)?;
                    v.obs_index = i;
                    Ok(v)
                })
                .collect()
        }
    }
}

/// Identifies a row in exported matrices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsId {
    pub bank_id: String,
    pub year: i32,
}

impl From<&BankObservation> for ObsId {
    fn from(o: &BankObservation) -> Self {
        ObsId { bank_id: o.bank_id.clone(), year: o.year }
    }
}

/// Columns: `obs_index, bank_id, year, bias, c_<feature>..., prediction`.
pub fn write_contributions_csv(
    path: &Path,
    feature_names: &[String],
    ids: &[ObsId],
    rows: &[ContributionVector],
) -> Result<()> {
    if ids.len() != rows.len() {
        return Err(Error::DimensionMismatch { expected: rows.len(), got: ids.len() });
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["obs_index".to_string(), "bank_id".into(), "year".into(), "bias".into()];
    header.extend(feature_names.iter().map(|f| format!("c_{f}")));
    header.push("prediction".into());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![row.obs_index.to_string(), id.bank_id.clone(), id.year.to_string(), row.bias.to_string()];
        rec.extend(row.contributions.iter().map(f64::to_string));
        rec.push(row.prediction.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub struct ContributionTable {
    pub feature_names: Vec<String>,
    pub ids: Vec<ObsId>,
    pub rows: Vec<ContributionVector>,
}

pub fn read_contributions_csv(path: &Path) -> Result<ContributionTable> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let n = headers.len();
    if n < 5 || &headers[0] != "obs_index" || &headers[3] != "bias" || &headers[n - 1] != "prediction" {
        return Err(Error::InvalidConfig(format!("{}: not a contribution matrix", path.display())));
    }
    let feature_names: Vec<String> =
        headers.iter().skip(4).take(n - 5).map(|h| h.trim_start_matches("c_").to_string()).collect();
    let bad = |what: &str| Error::InvalidConfig(format!("{}: bad {what}", path.display()));
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&headers[i]));
        ids.push(ObsId { bank_id: rec[1].to_string(), year: rec[2].parse().map_err(|_| bad("year"))? });
        rows.push(ContributionVector {
            obs_index: rec[0].parse().map_err(|_| bad("obs_index"))?,
            bias: num(3)?,
            contributions: (4..n - 1).map(num).collect::<Result<_>>()?,
            prediction: num(n - 1)?,
        });
    }
    Ok(ContributionTable { feature_names, ids, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{fit_forest, ForestParams, Node};

    fn leaf(mean: f64) -> Node {
        Node { feature: None, threshold: 0.0, mean, count: 1, left: 0, right: 0 }
    }

    fn split(feature: usize, threshold: f64, mean: f64, left: usize, right: usize) -> Node {
        Node { feature: Some(feature), threshold, mean, count: 2, left, right }
    }

    fn forest_of(trees: Vec<RegressionTree>) -> FittedForest {
        FittedForest {
            params: ForestParams { n_trees: trees.len(), ..Default::default() },
            trees,
            feature_names: crate::component::Component::names(),
            seed: 0,
            training_fingerprint: String::new(),
            n_train: 0,
        }
    }

    const LOANS: usize = 0;
    const EQUITY: usize = 8;

    #[test]
    fn constant_forest() {
        let forest = forest_of(vec![RegressionTree { nodes: vec![leaf(0.7)], bootstrap_indices: vec![] }]);
        let v = decompose_observation(&forest, &[0.1; 9]).unwrap();
        assert_eq!(v.bias, 0.7);
        assert_eq!(v.prediction, 0.7);
        assert!(v.contributions.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn one_split_path() {
        let tree = RegressionTree {
            nodes: vec![split(EQUITY, 0.1, 0.5, 1, 2), leaf(0.2), leaf(0.8)],
            bootstrap_indices: vec![],
        };
        let forest = forest_of(vec![tree]);
        let mut x = [0.3; 9];
        x[EQUITY] = 0.2;
        let v = decompose_observation(&forest, &x).unwrap();
        assert_eq!(v.bias, 0.5);
        assert!((v.contributions[EQUITY] - 0.3).abs() < 1e-15);
        assert_eq!(v.prediction, 0.8);
        for (i, c) in v.contributions.iter().enumerate() {
            if i != EQUITY {
                assert_eq!(*c, 0.0);
            }
        }
    }

    #[test]
    fn two_split_path() {
        let tree = RegressionTree {
            nodes: vec![split(LOANS, 0.5, 0.5, 1, 2), leaf(0.3), split(EQUITY, 0.1, 0.7, 3, 4), leaf(0.6), leaf(0.9)],
            bootstrap_indices: vec![],
        };
        let forest = forest_of(vec![tree]);
        let mut x = [0.0; 9];
        x[LOANS] = 0.8;
        x[EQUITY] = 0.2;
        let v = decompose_observation(&forest, &x).unwrap();
        assert_eq!(v.bias, 0.5);
        assert!((v.contributions[LOANS] - 0.2).abs() < 1e-15);
        assert!((v.contributions[EQUITY] - 0.2).abs() < 1e-15);
        assert_eq!(v.prediction, 0.9);
    }

    #[test]
    fn errors() {
        let forest = forest_of(vec![]);
        assert!(matches!(decompose_observation(&forest, &[0.0; 9]), Err(Error::EmptyForest)));
        let forest = forest_of(vec![RegressionTree { nodes: vec![leaf(0.7)], bootstrap_indices: vec![] }]);
        let mut x = [0.0; 9];
        x[1] = f64::INFINITY;
        assert!(matches!(decompose_observation(&forest, &x), Err(Error::NonFinite { feature: 1 })));
    }

    fn fitted() -> (FittedForest, TrainingData) {
        let rows: Vec<Vec<f64>> =
            (0..120).map(|i| (0..9).map(|j| ((i * (j + 3) * 7919) % 101) as f64 / 101.0).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 - r[8] + (r[3] > 0.5) as u8 as f64).collect();
        let data = TrainingData::from_rows(&rows, y).unwrap();
        let forest = fit_forest(
            &data,
            &crate::component::Component::names(),
            &ForestParams { n_trees: 30, ..Default::default() },
            5,
        )
        .unwrap();
        (forest, data)
    }

    #[test]
    fn matrix_identity_and_prediction() {
        let (forest, data) = fitted();
        let m = contribution_matrix(&forest, &data).unwrap();
        assert_eq!(m.len(), data.len());
        for (i, v) in m.iter().enumerate() {
            assert_eq!(v.obs_index, i);
            assert!(v.residual().abs() < 1e-8);
            assert_eq!(v.prediction, forest.predict(data.row(i)).unwrap());
        }
        let mean = |f: &dyn Fn(&ContributionVector) -> f64| m.iter().map(f).sum::<f64>() / m.len() as f64;
        let lhs = mean(&|v| v.prediction);
        let rhs = mean(&|v| v.bias) + (0..9).map(|j| mean(&|v| v.contributions[j])).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-8);

        let roots: f64 = forest.trees.iter().map(|t| t.root().mean).sum::<f64>() / forest.trees.len() as f64;
        assert!((m[0].bias - roots).abs() < 1e-15);
    }

    #[test]
    fn single_row_group() {
        let (forest, data) = fitted();
        let one = data.subset(&[7]);
        let m = contribution_matrix(&forest, &one).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].contributions, decompose_observation(&forest, data.row(7)).unwrap().contributions);
    }

    #[test]
    fn tree_order_is_irrelevant() {
        let (forest, data) = fitted();
        let mut reversed = forest.clone();
        reversed.trees.reverse();
        for i in 0..data.len() {
            let a = decompose_observation(&forest, data.row(i)).unwrap();
            let b = decompose_observation(&reversed, data.row(i)).unwrap();
            assert!((a.bias - b.bias).abs() < 1e-12);
            for j in 0..9 {
                assert!((a.contributions[j] - b.contributions[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unused_features_contribute_nothing() {
        let (forest, data) = fitted();
        for i in 0..data.len() {
            let x = data.row(i);
            let mut used = [false; 9];
            for t in &forest.trees {
                t.walk_path(x, |p, _| used[p.feature.unwrap()] = true);
            }
            let v = decompose_observation(&forest, x).unwrap();
            for (c, &u) in v.contributions.iter().zip(&used) {
                if !u {
                    assert_eq!(*c, 0.0);
                }
            }
        }
    }

    #[test]
    fn out_of_bag_mode() {
        let (forest, data) = fitted();
        let m = contribution_matrix_with(&forest, &data, DecompositionMode::OutOfBag).unwrap();
        let oob = forest.oob_predictions(&data).unwrap();
        for (v, p) in m.iter().zip(oob) {
            assert!(v.residual().abs() < 1e-8);
            assert!((v.prediction - p.unwrap()).abs() < 1e-12);
        }
        let other = data.subset(&[0, 1, 2]);
        assert!(contribution_matrix_with(&forest, &other, DecompositionMode::OutOfBag).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (forest, data) = fitted();
        let m = contribution_matrix(&forest, &data).unwrap();
        let ids: Vec<ObsId> = (0..m.len()).map(|i| ObsId { bank_id: format!("b{i}"), year: 2000 }).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_contributions_csv(&path, &forest.feature_names, &ids, &m).unwrap();
        let back = read_contributions_csv(&path).unwrap();
        assert_eq!(back.rows, m);
        assert_eq!(back.ids, ids);
        assert_eq!(back.feature_names, forest.feature_names);
    }
}
