//! Random forests of CART regression trees.
//!
//! Each tree is grown on its own bootstrap sample. At every node `mtry`
//! features are sampled without replacement and the (feature, threshold)
//! pair minimising the children's summed squared error is chosen; candidate
//! thresholds are midpoints between consecutive distinct values. Growth stops
//! at `max_depth`, when a node has fewer than `2 * min_leaf` rows, or when its
//! responses are all equal. Ties go to the lower feature index, then the lower
//! threshold.
//!
//! Tree `t` draws all of its randomness from stream `t` of the master seed,
//! so a forest is bit-identical whatever the thread count, and the first `m`
//! trees of an `n`-tree forest are exactly an `m`-tree forest.

mod tree;
mod tune;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::panel::BankObservation;
use crate::rng::{self, Purpose};

pub use tree::{Node, RegressionTree};
pub use tune::{cv_rmse, default_grid, fold_assignment, tune_hyperparameters, GridScore, TuningOutcome};

/// Row-major feature matrix plus response.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    x: Vec<f64>,
    y: Vec<f64>,
    n_features: usize,
}

impl TrainingData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, n_features: usize) -> Result<Self> {
        if n_features == 0 || x.len() != y.len() * n_features {
            return Err(Error::DimensionMismatch { expected: y.len() * n_features, got: x.len() });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { feature: pos % n_features });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { feature: n_features });
        }
        Ok(TrainingData { x, y, n_features })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidParams("ragged feature rows".into()));
        }
        Self::new(rows.concat(), y, p)
    }

    /// Portfolio components as features, profitability as response.
    pub fn from_observations<'a>(obs: impl IntoIterator<Item = &'a BankObservation>) -> Result<Self> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for o in obs {
            x.extend_from_slice(&o.components);
            y.push(o.profitability);
        }
        Self::new(x, y, crate::component::N_COMPONENTS)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.x.chunks_exact(self.n_features)
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> TrainingData {
        let mut x = Vec::with_capacity(idx.len() * self.n_features);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        TrainingData { x, y, n_features: self.n_features }
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.n_features as u64).to_le_bytes());
        for v in self.x.iter().chain(&self.y) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features sampled at each split.
    pub mtry: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap_fraction: f64,
    /// When false every tree sees each training row exactly once.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, mtry: 3, max_depth: None, min_leaf: 5, bootstrap_fraction: 1.0, bootstrap: true }
    }
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParams("n_trees must be positive".into()));
        }
        if self.mtry == 0 || self.mtry > n_features {
            return Err(Error::InvalidParams(format!("mtry {} outside 1..={n_features}", self.mtry)));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidParams("min_leaf must be positive".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParams("max_depth must be positive".into()));
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return Err(Error::InvalidParams(format!("bootstrap_fraction {} outside (0, 1]", self.bootstrap_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedForest {
    pub trees: Vec<RegressionTree>,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub training_fingerprint: String,
    pub n_train: usize,
}

/// Grows `params.n_trees` trees in parallel.
pub fn fit_forest(
    data: &TrainingData,
    feature_names: &[String],
    params: &ForestParams,
    seed: u64,
) -> Result<FittedForest> {
    params.validate(data.n_features())?;
    if feature_names.len() != data.n_features() {
        return Err(Error::DimensionMismatch { expected: data.n_features(), got: feature_names.len() });
    }
    let needed = (2 * params.min_leaf).max(1);
    if data.len() < needed {
        return Err(Error::GroupTooSmall { n: data.len(), needed });
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| tree::grow_tree(data, params, &mut rng::stream(seed, Purpose::Tree, t as u64)))
        .collect();
    Ok(FittedForest {
        trees,
        params: params.clone(),
        feature_names: feature_names.to_vec(),
        seed,
        training_fingerprint: data.fingerprint(),
        n_train: data.len(),
    })
}

pub(crate) fn check_input(forest: &FittedForest, x: &[f64]) -> Result<()> {
    if forest.trees.is_empty() {
        return Err(Error::EmptyForest);
    }
    if x.len() != forest.feature_names.len() {
        return Err(Error::DimensionMismatch { expected: forest.feature_names.len(), got: x.len() });
    }
    if let Some(feature) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { feature });
    }
    Ok(())
}

impl FittedForest {
    /// Mean over trees of the leaf mean reached by `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_input(self, x)?;
        let sum = self.trees.iter().fold(0.0, |acc, t| acc + t.predict(x));
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_all(&self, data: &TrainingData) -> Result<Vec<f64>> {
        (0..data.len()).into_par_iter().map(|i| self.predict(data.row(i))).collect()
    }

    /// Per-tree in-bag mask over the training rows.
    pub fn in_bag(&self, tree: usize) -> Vec<bool> {
        let mut mask = vec![false; self.n_train];
        for &r in &self.trees[tree].bootstrap_indices {
            mask[r as usize] = true;
        }
        mask
    }

    pub(crate) fn check_training(&self, data: &TrainingData) -> Result<()> {
        if data.len() != self.n_train || data.fingerprint() != self.training_fingerprint {
            return Err(Error::NotTrainingData);
        }
        Ok(())
    }

    /// Out-of-bag prediction per training row; `None` where every tree saw the row.
    pub fn oob_predictions(&self, data: &TrainingData) -> Result<Vec<Option<f64>>> {
        self.check_training(data)?;
        let masks: Vec<Vec<bool>> = (0..self.trees.len()).into_par_iter().map(|t| self.in_bag(t)).collect();
        Ok((0..data.len())
            .into_par_iter()
            .map(|i| {
                let x = data.row(i);
                let (mut sum, mut n) = (0.0, 0usize);
                for (tree, mask) in self.trees.iter().zip(&masks) {
                    if !mask[i] {
                        sum += tree.predict(x);
                        n += 1;
                    }
                }
                (n > 0).then(|| sum / n as f64)
            })
            .collect())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<FittedForest> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let forest: FittedForest = serde_json::from_reader(BufReader::new(file))?;
        if forest.trees.len() != forest.params.n_trees {
            return Err(Error::InvalidParams(format!(
                "{}: has {} trees, params say {}",
                path.display(),
                forest.trees.len(),
                forest.params.n_trees
            )));
        }
        Ok(forest)
    }
}

/// RMSE of out-of-bag predictions over rows that are out-of-bag for some tree.
pub fn oob_rmse(forest: &FittedForest, data: &TrainingData) -> Result<f64> {
    let preds = forest.oob_predictions(data)?;
    let (mut sse, mut n) = (0.0, 0usize);
    for (p, y) in preds.iter().zip(data.response()) {
        if let Some(p) = p {
            sse += (p - y).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoOutOfBag);
    }
    Ok((sse / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("f{i}")).collect()
    }

    fn random_data(n: usize, p: usize, seed: u64, f: impl Fn(&[f64]) -> f64, noise: f64) -> TrainingData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            y.push(f(&row) + noise * normal.sample(&mut rng));
            x.extend(row);
        }
        TrainingData::new(x, y, p).unwrap()
    }

    fn no_bootstrap(n_trees: usize, mtry: usize, min_leaf: usize) -> ForestParams {
        ForestParams { n_trees, mtry, max_depth: None, min_leaf, bootstrap_fraction: 1.0, bootstrap: false }
    }

    /// Twenty rows; equity (feature 8) <= 0.1 gives response 0, otherwise 1.
    /// Other features are noise that cannot separate the classes.
    pub(crate) fn equity_split_data() -> TrainingData {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let mut row: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let low = i % 2 == 0;
            row[8] = if low { 0.05 + 0.001 * i as f64 } else { 0.15 + 0.001 * i as f64 };
            y.push(if low { 0.0 } else { 1.0 });
            x.extend(row);
        }
        TrainingData::new(x, y, 9).unwrap()
    }

    #[test]
    fn constant_response_gives_single_leaf_trees() {
        let data = random_data(50, 9, 1, |_| 0.25, 0.0);
        let forest = fit_forest(&data, &names(9), &ForestParams { n_trees: 20, ..Default::default() }, 7).unwrap();
        for t in &forest.trees {
            assert_eq!(t.nodes.len(), 1);
            assert_eq!(t.root().mean, 0.25);
        }
        assert_eq!(forest.predict(&[0.3; 9]).unwrap(), 0.25);
        assert_eq!(oob_rmse(&forest, &data).unwrap(), 0.0);
    }

    #[test]
    fn equity_split_is_found() {
        let data = equity_split_data();
        let forest = fit_forest(&data, &names(9), &no_bootstrap(1, 9, 1), 0).unwrap();
        let tree = &forest.trees[0];
        let root = tree.root();
        assert_eq!(root.feature, Some(8));
        assert_eq!(root.mean, 0.5);
        assert!(root.threshold > 0.068 && root.threshold < 0.151);
        assert_eq!(tree.nodes[root.left].mean, 0.0);
        assert_eq!(tree.nodes[root.right].mean, 1.0);
        assert!(tree.nodes[root.left].is_leaf() && tree.nodes[root.right].is_leaf());

        let mut obs = vec![0.5; 9];
        obs[8] = 0.05;
        assert_eq!(forest.predict(&obs).unwrap(), 0.0);
    }

    #[test]
    fn two_tree_average() {
        let data = equity_split_data();
        let mut forest = fit_forest(&data, &names(9), &no_bootstrap(2, 9, 1), 0).unwrap();
        // Overwrite the two leaves reached with 0.2 and 0.4.
        let mut obs = vec![0.5; 9];
        obs[8] = 0.05;
        let l0 = forest.trees[0].leaf_index(&obs);
        let l1 = forest.trees[1].leaf_index(&obs);
        forest.trees[0].nodes[l0].mean = 0.2;
        forest.trees[1].nodes[l1].mean = 0.4;
        assert!((forest.predict(&obs).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_bad_input() {
        let data = equity_split_data();
        let forest = fit_forest(&data, &names(9), &no_bootstrap(1, 9, 1), 0).unwrap();
        let mut obs = vec![0.5; 9];
        obs[2] = f64::NAN;
        assert!(matches!(forest.predict(&obs), Err(Error::NonFinite { feature: 2 })));
        assert!(forest.predict(&[0.5; 3]).is_err());
    }

    #[test]
    fn fit_errors() {
        let data = random_data(9, 9, 1, |r| r[0], 0.0);
        let err = fit_forest(&data, &names(9), &ForestParams { min_leaf: 5, ..Default::default() }, 0);
        assert!(matches!(err, Err(Error::GroupTooSmall { n: 9, needed: 10 })));
        let err = fit_forest(&data, &names(9), &ForestParams { mtry: 10, min_leaf: 1, ..Default::default() }, 0);
        assert!(matches!(err, Err(Error::InvalidParams(_))));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let data = random_data(300, 9, 5, |r| r[0] * 2.0 + r[3], 0.1);
        let params = ForestParams { n_trees: 40, ..Default::default() };
        let fit_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit_forest(&data, &names(9), &params, 11).unwrap())
        };
        let a = fit_with(1);
        let b = fit_with(8);
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn prefix_of_larger_forest_is_smaller_forest() {
        let data = random_data(200, 9, 5, |r| r[1], 0.1);
        let small = fit_forest(&data, &names(9), &ForestParams { n_trees: 10, ..Default::default() }, 4).unwrap();
        let large = fit_forest(&data, &names(9), &ForestParams { n_trees: 25, ..Default::default() }, 4).unwrap();
        assert_eq!(small.trees[..], large.trees[..10]);
    }

    #[test]
    fn full_tree_interpolates_training_rows() {
        let data = random_data(100, 9, 8, |r| r[0] + r[5], 0.05);
        let forest = fit_forest(&data, &names(9), &no_bootstrap(1, 9, 1), 0).unwrap();
        for i in 0..data.len() {
            assert_eq!(forest.predict(data.row(i)).unwrap(), data.response()[i]);
        }
    }

    #[test]
    fn oob_requires_out_of_bag_rows() {
        let data = random_data(30, 9, 2, |r| r[0], 0.1);
        let forest = fit_forest(&data, &names(9), &no_bootstrap(1, 3, 1), 0).unwrap();
        assert!(matches!(oob_rmse(&forest, &data), Err(Error::NoOutOfBag)));
        let other = random_data(30, 9, 3, |r| r[0], 0.1);
        assert!(matches!(oob_rmse(&forest, &other), Err(Error::NotTrainingData)));
    }

    #[test]
    fn oob_rmse_tracks_noise_level() {
        let sigma = 0.5;
        let data = random_data(2000, 9, 21, |r| 2.0 * r[0] + if r[1] > 0.5 { 1.0 } else { 0.0 }, sigma);
        let forest =
            fit_forest(&data, &names(9), &ForestParams { n_trees: 150, min_leaf: 5, ..Default::default() }, 9).unwrap();
        let rmse = oob_rmse(&forest, &data).unwrap();
        assert!((rmse - sigma).abs() < 0.25 * sigma, "oob rmse {rmse}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let data = random_data(120, 9, 5, |r| r[0].sin() / 3.0, 0.01);
        let forest = fit_forest(&data, &names(9), &ForestParams { n_trees: 5, ..Default::default() }, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        forest.save_json(&path).unwrap();
        assert_eq!(FittedForest::load_json(&path).unwrap(), forest);
    }

    fn replay_means(tree: &RegressionTree, data: &TrainingData) -> Vec<(f64, usize, f64)> {
        // (sum, count, sse) of training rows reaching each node.
        let mut acc = vec![(0.0, 0usize, Vec::<f64>::new()); tree.nodes.len()];
        for &r in &tree.bootstrap_indices {
            let x = data.row(r as usize);
            let y = data.response()[r as usize];
            let mut i = 0;
            loop {
                acc[i].0 += y;
                acc[i].1 += 1;
                acc[i].2.push(y);
                let n = &tree.nodes[i];
                match n.feature {
                    None => break,
                    Some(f) => i = if x[f] <= n.threshold { n.left } else { n.right },
                }
            }
        }
        acc.into_iter()
            .map(|(s, c, ys)| {
                let m = s / c as f64;
                (m, c, ys.iter().map(|y| (y - m).powi(2)).sum())
            })
            .collect()
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn node_statistics_replay(seed in 0u64..1000, min_leaf in 1usize..6, mtry in 1usize..=9) {
                let data = random_data(80, 9, seed, |r| r[0] * r[2] + if r[4] > 0.3 { 0.5 } else { 0.0 }, 0.1);
                let params = ForestParams { n_trees: 3, mtry, min_leaf, ..Default::default() };
                let forest = fit_forest(&data, &names(9), &params, seed).unwrap();
                for tree in &forest.trees {
                    let replay = replay_means(tree, &data);
                    let root_mean = tree.bootstrap_indices.iter().map(|&r| data.response()[r as usize]).sum::<f64>()
                        / tree.bootstrap_indices.len() as f64;
                    prop_assert!((tree.root().mean - root_mean).abs() < 1e-12);
                    for (node, (mean, count, sse)) in tree.nodes.iter().zip(&replay) {
                        prop_assert!((node.mean - mean).abs() < 1e-12);
                        prop_assert_eq!(node.count, *count);
                        match node.feature {
                            None => prop_assert!(node.count >= min_leaf),
                            Some(_) => {
                                prop_assert_eq!(node.count, tree.nodes[node.left].count + tree.nodes[node.right].count);
                                let child_sse = replay[node.left].2 + replay[node.right].2;
                                prop_assert!(child_sse <= sse + 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }
}
