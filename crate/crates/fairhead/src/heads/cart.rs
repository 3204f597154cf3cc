//! CART decision trees with Gini impurity, plus bagged and balanced-bootstrap
//! forests. Forests draw per-tree seeds `seed + tree_index` and may train
//! trees in parallel without changing the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HeadError;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHeadParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeHeadParams {
    fn default() -> Self {
        TreeHeadParams { max_depth: 10, min_samples_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: 10, min_samples_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CartNode {
    Internal { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { proba: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartTree {
    pub nodes: Vec<CartNode>,
}

impl CartTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                CartNode::Leaf { proba } => return *proba,
                CartNode::Internal { feature, threshold, left, right } => {
                    node = if row[*feature as usize] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<CartTree>,
    pub n_features: usize,
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }
}

struct NodeTask {
    indices: Vec<usize>,
    depth: usize,
    slot: usize,
}

/// Weighted Gini impurity times total weight: `W * (1 - p^2 - (1-p)^2)`.
fn weighted_gini(w_pos: f64, w_total: f64) -> f64 {
    if w_total <= 0.0 {
        return 0.0;
    }
    let p = w_pos / w_total;
    w_total * 2.0 * p * (1.0 - p)
}

/// Grows a CART tree on the given sample indices. `feature_subsample` draws
/// that many candidate features per split from the provided rng; `None`
/// considers all features.
pub fn fit_cart(
    x: &DenseMatrix,
    y: &[u8],
    weights: &[f64],
    indices: &[usize],
    params: &TreeHeadParams,
    feature_subsample: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<CartTree, HeadError> {
    let has_pos = indices.iter().any(|&i| y[i] == 1 && weights[i] > 0.0);
    let has_neg = indices.iter().any(|&i| y[i] == 0 && weights[i] > 0.0);
    if !has_pos || !has_neg {
        return Err(HeadError::SingleClass);
    }
    let k = x.n_cols();
    let mut nodes: Vec<CartNode> = vec![CartNode::Leaf { proba: 0.0 }];
    let mut stack = vec![NodeTask { indices: indices.to_vec(), depth: 0, slot: 0 }];

    // Depth-first, left child first: a fixed expansion order keeps the rng
    // stream (feature subsampling) deterministic.
    while let Some(task) = stack.pop() {
        let w_total: f64 = task.indices.iter().map(|&i| weights[i]).sum();
        let w_pos: f64 =
            task.indices.iter().filter(|&&i| y[i] == 1).map(|&i| weights[i]).sum();
        let leaf_proba = if w_total > 0.0 { w_pos / w_total } else { 0.5 };

        let can_split = task.depth < params.max_depth
            && task.indices.len() >= 2 * params.min_samples_leaf
            && w_pos > 0.0
            && w_pos < w_total;
        let mut best: Option<(f64, u32, f64)> = None; // (decrease, feature, threshold)

        if can_split {
            let features: Vec<usize> = match feature_subsample {
                None => (0..k).collect(),
                Some(m) => {
                    // Sample m distinct features; sorted for a deterministic
                    // evaluation order.
                    let mut chosen: Vec<usize> = Vec::with_capacity(m);
                    while chosen.len() < m.min(k) {
                        let f = rng.gen_range(0..k);
                        if !chosen.contains(&f) {
                            chosen.push(f);
                        }
                    }
                    chosen.sort_unstable();
                    chosen
                }
            };
            let parent_impurity = weighted_gini(w_pos, w_total);

            for f in features {
                let mut order: Vec<usize> = task.indices.clone();
                order.sort_by(|&a, &b| {
                    x.get(a, f).partial_cmp(&x.get(b, f)).unwrap().then(a.cmp(&b))
                });
                let mut wl = 0.0;
                let mut wl_pos = 0.0;
                let mut count_left = 0usize;
                for pos in 0..order.len() - 1 {
                    let i = order[pos];
                    wl += weights[i];
                    if y[i] == 1 {
                        wl_pos += weights[i];
                    }
                    count_left += 1;
                    let v = x.get(i, f);
                    let v_next = x.get(order[pos + 1], f);
                    if v_next <= v {
                        continue;
                    }
                    if count_left < params.min_samples_leaf
                        || order.len() - count_left < params.min_samples_leaf
                    {
                        continue;
                    }
                    let decrease = parent_impurity
                        - weighted_gini(wl_pos, wl)
                        - weighted_gini(w_pos - wl_pos, w_total - wl);
                    if decrease > 0.0 && best.map_or(true, |(d, _, _)| decrease > d) {
                        best = Some((decrease, f as u32, 0.5 * (v + v_next)));
                    }
                }
            }
        }

        match best {
            Some((_, feature, threshold)) => {
                let (mut left_idx, mut right_idx) = (Vec::new(), Vec::new());
                for &i in &task.indices {
                    if x.get(i, feature as usize) < threshold {
                        left_idx.push(i);
                    } else {
                        right_idx.push(i);
                    }
                }
                let left = nodes.len() as u32;
                let right = left + 1;
                nodes.push(CartNode::Leaf { proba: 0.0 });
                nodes.push(CartNode::Leaf { proba: 0.0 });
                nodes[task.slot] =
                    CartNode::Internal { feature, threshold, left, right };
                // Push right first so the left child pops first.
                stack.push(NodeTask {
                    indices: right_idx,
                    depth: task.depth + 1,
                    slot: right as usize,
                });
                stack.push(NodeTask {
                    indices: left_idx,
                    depth: task.depth + 1,
                    slot: left as usize,
                });
            }
            None => {
                nodes[task.slot] = CartNode::Leaf { proba: leaf_proba };
            }
        }
    }

    Ok(CartTree { nodes })
}

fn bootstrap_uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Per-tree bootstrap drawing the same number of samples from each class
/// (the minority count), which rebalances what each tree sees.
fn bootstrap_balanced(y: &[u8], indices_by_class: &[Vec<usize>; 2], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let _ = y;
    let m = indices_by_class[0].len().min(indices_by_class[1].len());
    let mut out = Vec::with_capacity(2 * m);
    for class in indices_by_class {
        for _ in 0..m {
            out.push(class[rng.gen_range(0..class.len())]);
        }
    }
    out
}

pub fn fit_forest(
    x: &DenseMatrix,
    y: &[u8],
    weights: &[f64],
    params: &ForestParams,
    balanced: bool,
    seed: u64,
) -> Result<ForestModel, HeadError> {
    let n = x.n_rows();
    let has_pos = y.iter().zip(weights).any(|(&l, &w)| l == 1 && w > 0.0);
    let has_neg = y.iter().zip(weights).any(|(&l, &w)| l == 0 && w > 0.0);
    if !has_pos || !has_neg {
        return Err(HeadError::SingleClass);
    }
    let indices_by_class: [Vec<usize>; 2] = {
        let neg = (0..n).filter(|&i| y[i] == 0).collect();
        let pos = (0..n).filter(|&i| y[i] == 1).collect();
        [neg, pos]
    };
    let subsample = (x.n_cols() as f64).sqrt().ceil() as usize;
    let tree_params =
        TreeHeadParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf };

    let trees: Result<Vec<CartTree>, HeadError> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let sample = if balanced {
                bootstrap_balanced(y, &indices_by_class, &mut rng)
            } else {
                bootstrap_uniform(n, &mut rng)
            };
            fit_cart(x, y, weights, &sample, &tree_params, Some(subsample), &mut rng)
        })
        .collect();

    Ok(ForestModel { trees: trees?, n_features: x.n_cols() })
}
