use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_forest, ForestParams, TrainingData};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: ForestParams,
    pub cv_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub best: ForestParams,
    /// One score per grid point, in grid order.
    pub scores: Vec<GridScore>,
}

/// n_trees {300, 500} x mtry {3, 5, 9} x min_leaf {5, 25}, unbounded depth.
pub fn default_grid() -> Vec<ForestParams> {
    let mut grid = Vec::new();
    for n_trees in [300, 500] {
        for mtry in [3, 5, 9] {
            for min_leaf in [5, 25] {
                grid.push(ForestParams { n_trees, mtry, min_leaf, ..ForestParams::default() });
            }
        }
    }
    grid
}

/// Fold id per row: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Folds, 0));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

fn check_folds(n: usize, folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::GroupTooSmall { n, needed: folds });
    }
    Ok(())
}

/// Mean over folds of the held-out RMSE for each `n_trees` prefix in `prefixes`.
///
/// Only one forest (with the largest prefix) is fitted per fold.
fn cv_prefix_scores(
    data: &TrainingData,
    base: &ForestParams,
    prefixes: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let fold_of = fold_assignment(data.len(), folds, seed);
    let max_trees = *prefixes.iter().max().expect("non-empty prefixes");
    let params = ForestParams { n_trees: max_trees, ..base.clone() };
    let names: Vec<String> = (0..data.n_features()).map(|i| format!("x{i}")).collect();

    let mut totals = vec![0.0; prefixes.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == fold).collect();
        let forest = fit_forest(&data.subset(&train), &names, &params, rng::mix(seed, fold as u64))?;
        // Squared error per test row for each prefix; summed in row order.
        let per_row: Vec<Vec<f64>> = test
            .par_iter()
            .map(|&i| {
                let x = data.row(i);
                let mut cumulative = 0.0;
                let mut out = vec![0.0; prefixes.len()];
                for (t, tree) in forest.trees.iter().enumerate() {
                    cumulative += tree.predict(x);
                    for (slot, &m) in prefixes.iter().enumerate() {
                        if m == t + 1 {
                            out[slot] = (cumulative / m as f64 - data.response()[i]).powi(2);
                        }
                    }
                }
                out
            })
            .collect();
        for (slot, total) in totals.iter_mut().enumerate() {
            let sse: f64 = per_row.iter().map(|r| r[slot]).sum();
            *total += (sse / test.len() as f64).sqrt();
        }
    }
    Ok(totals.into_iter().map(|t| t / folds as f64).collect())
}

/// Mean k-fold cross-validated RMSE of one parameter set.
pub fn cv_rmse(data: &TrainingData, params: &ForestParams, folds: usize, seed: u64) -> Result<f64> {
    check_folds(data.len(), folds)?;
    params.validate(data.n_features())?;
    Ok(cv_prefix_scores(data, params, &[params.n_trees], folds, seed)?[0])
}

fn same_except_trees(a: &ForestParams, b: &ForestParams) -> bool {
    ForestParams { n_trees: 0, ..a.clone() } == ForestParams { n_trees: 0, ..b.clone() }
}

/// Ranks simpler configurations first among equal scores.
fn simplicity(a: &ForestParams, b: &ForestParams) -> Ordering {
    a.n_trees
        .cmp(&b.n_trees)
        .then(a.max_depth.unwrap_or(usize::MAX).cmp(&b.max_depth.unwrap_or(usize::MAX)))
        .then(b.min_leaf.cmp(&a.min_leaf))
}

/// Grid point with the lowest mean k-fold CV RMSE.
///
/// Ties are broken by fewer trees, then smaller depth, then larger `min_leaf`,
/// then grid order.
pub fn tune_hyperparameters(
    data: &TrainingData,
    grid: &[ForestParams],
    folds: usize,
    seed: u64,
) -> Result<TuningOutcome> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    check_folds(data.len(), folds)?;
    for p in grid {
        p.validate(data.n_features())?;
    }

    let mut scores = vec![f64::NAN; grid.len()];
    let mut done = vec![false; grid.len()];
    for i in 0..grid.len() {
        if done[i] {
            continue;
        }
        let members: Vec<usize> =
            (i..grid.len()).filter(|&j| !done[j] && same_except_trees(&grid[i], &grid[j])).collect();
        let mut prefixes: Vec<usize> = members.iter().map(|&j| grid[j].n_trees).collect();
        prefixes.sort_unstable();
        prefixes.dedup();
        let group_scores = cv_prefix_scores(data, &grid[i], &prefixes, folds, seed)?;
        for &j in &members {
            let slot = prefixes.binary_search(&grid[j].n_trees).expect("prefix present");
            scores[j] = group_scores[slot];
            done[j] = true;
        }
    }

    let best = (0..grid.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| simplicity(&grid[a], &grid[b])).then(a.cmp(&b)))
        .expect("non-empty grid");
    log::info!("tuning selected {:?} (cv rmse {})", grid[best], scores[best]);
    Ok(TuningOutcome {
        best: grid[best].clone(),
        scores: grid.iter().zip(&scores).map(|(p, &s)| GridScore { params: p.clone(), cv_rmse: s }).collect(),
    })
}
