use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForestParams, TrainingData};

/// A tree node. Leaves have `feature == None`; `left`/`right` are then unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    /// Mean training response of the rows routed to this node.
    pub mean: f64,
    pub count: usize,
    pub left: usize,
    pub right: usize,
}

impl Node {
    fn leaf(mean: f64, count: usize) -> Self {
        Node { feature: None, threshold: 0.0, mean, count, left: 0, right: 0 }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

/// A CART regression tree stored as a flat node array; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    /// Training rows drawn for this tree (with multiplicity), ascending.
    pub bootstrap_indices: Vec<u32>,
}

impl RegressionTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return i,
                Some(f) => i = if x[f] <= node.threshold { node.left } else { node.right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].mean
    }

    /// Calls `visit(parent, child)` for each edge of the root-to-leaf path of `x`.
    pub fn walk_path(&self, x: &[f64], mut visit: impl FnMut(&Node, &Node)) -> &Node {
        let mut node = &self.nodes[0];
        while let Some(f) = node.feature {
            let child = &self.nodes[if x[f] <= node.threshold { node.left } else { node.right }];
            visit(node, child);
            node = child;
        }
        node
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + go(t, n.left).max(go(t, n.right))
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }
}

struct Split {
    score: f64,
    feature: usize,
    threshold: f64,
}

pub(crate) fn grow_tree(data: &TrainingData, params: &ForestParams, rng: &mut ChaCha8Rng) -> RegressionTree {
    let n = data.len();
    let p = data.n_features();
    let mut rows: Vec<u32> = if params.bootstrap {
        let m = ((params.bootstrap_fraction * n as f64).round() as usize).max(1);
        let mut drawn: Vec<u32> = (0..m).map(|_| rng.random_range(0..n) as u32).collect();
        drawn.sort_unstable();
        drawn
    } else {
        (0..n as u32).collect()
    };
    let bootstrap_indices = rows.clone();

    let y = data.response();
    let x = data.features();
    let mean_of = |rows: &[u32]| rows.iter().map(|&r| y[r as usize]).sum::<f64>() / rows.len() as f64;

    let mut nodes = vec![Node::leaf(mean_of(&rows), rows.len())];
    let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());

    while let Some((id, start, end, depth)) = stack.pop() {
        let count = end - start;
        if params.max_depth.is_some_and(|d| depth >= d) || count < 2 * params.min_leaf {
            continue;
        }
        let slice = &mut rows[start..end];
        let first = y[slice[0] as usize];
        if slice.iter().all(|&r| y[r as usize] == first) {
            continue;
        }

        let mut features = index::sample(rng, p, params.mtry).into_vec();
        features.sort_unstable();
        let total: f64 = slice.iter().map(|&r| y[r as usize]).sum();
        let mut best: Option<Split> = None;
        for &f in &features {
            pairs.clear();
            pairs.extend(slice.iter().map(|&r| (x[r as usize * p + f], y[r as usize])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut left_sum = 0.0;
            for i in 0..count - 1 {
                left_sum += pairs[i].1;
                let n_left = i + 1;
                let n_right = count - n_left;
                if n_right < params.min_leaf {
                    break;
                }
                if n_left < params.min_leaf || pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split { score, feature: f, threshold });
                }
            }
        }

        let Some(split) = best else { continue };
        let mut mid = 0;
        for i in 0..count {
            if x[slice[i] as usize * p + split.feature] <= split.threshold {
                slice.swap(i, mid);
                mid += 1;
            }
        }
        let (left_rows, right_rows) = slice.split_at(mid);
        let left = nodes.len();
        nodes.push(Node::leaf(mean_of(left_rows), left_rows.len()));
        let right = nodes.len();
        nodes.push(Node::leaf(mean_of(right_rows), right_rows.len()));
        let node = &mut nodes[id];
        node.feature = Some(split.feature);
        node.threshold = split.threshold;
        node.left = left;
        node.right = right;
        stack.push((right, start + mid, end, depth + 1));
        stack.push((left, start, start + mid, depth + 1));
    }

    RegressionTree { nodes, bootstrap_indices }
}
