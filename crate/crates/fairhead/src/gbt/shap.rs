//! Path-dependent Shapley attribution for boosted tree ensembles.
//!
//! Per-tree values follow the polynomial-time path algorithm for trees, with
//! child cover fractions standing in for the background distribution; per-tree
//! contributions are scaled by the learning rate and summed. Local accuracy
//! holds exactly: `base_value + sum(phi) == margin`.

use serde::{Deserialize, Serialize};

use super::{GbtError, GbtModel, Tree, TreeNode};

/// Additive explanation of one prediction in margin (log-odds) units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    /// Cover-weighted expectation of the model output.
    pub base_value: f64,
    /// Per-feature contributions; `base_value + phi.sum()` is the margin.
    pub phi: Vec<f64>,
}

/// Computes per-feature Shapley contributions for one sample.
pub fn tree_shapley(model: &GbtModel, x: &[f64]) -> Result<ShapleyAttribution, GbtError> {
    if x.len() != model.n_features {
        return Err(GbtError::DimMismatch { expected: model.n_features, got: x.len() });
    }
    let mut phi = vec![0.0; model.n_features];
    let mut base_value = model.base_score;
    for tree in &model.trees {
        base_value += model.params.learning_rate * tree.expectation();
        shap_one_tree(tree, x, model.params.learning_rate, &mut phi);
    }
    Ok(ShapleyAttribution { base_value, phi })
}

#[derive(Debug, Clone)]
struct PathItem {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

impl PathItem {
    fn empty() -> PathItem {
        PathItem { feature: None, zero_fraction: 0.0, one_fraction: 0.0, pweight: 0.0 }
    }
}

fn shap_one_tree(tree: &Tree, x: &[f64], scale: f64, phi: &mut [f64]) {
    let max_depth = tree.depth() + 2;
    let mut unique_path = vec![PathItem::empty(); max_depth * (max_depth + 1) / 2];
    recurse(tree, x, scale, phi, 0, &mut unique_path, 0, 1.0, 1.0, None);
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    x: &[f64],
    scale: f64,
    phi: &mut [f64],
    node: usize,
    unique_path: &mut [PathItem],
    unique_depth: usize,
    parent_zero_fraction: f64,
    parent_one_fraction: f64,
    parent_feature: Option<usize>,
) {
    extend_path(
        unique_path,
        unique_depth,
        parent_zero_fraction,
        parent_one_fraction,
        parent_feature,
    );
    let mut unique_depth = unique_depth;
    match &tree.nodes[node] {
        TreeNode::Leaf { weight, .. } => {
            for path_index in 1..=unique_depth {
                let w = unwound_path_sum(unique_path, unique_depth, path_index);
                let item = &unique_path[path_index];
                phi[item.feature.unwrap()] +=
                    w * (item.one_fraction - item.zero_fraction) * weight * scale;
            }
        }
        TreeNode::Internal { feature, threshold, left, right, cover } => {
            let feature = *feature as usize;
            let (hot, cold) = if x[feature] < *threshold {
                (*left as usize, *right as usize)
            } else {
                (*right as usize, *left as usize)
            };
            let hot_zero_fraction = tree.nodes[hot].cover() / cover;
            let cold_zero_fraction = tree.nodes[cold].cover() / cover;
            let mut incoming_zero_fraction = 1.0;
            let mut incoming_one_fraction = 1.0;

            // A feature reappearing along the path undoes its previous entry.
            if let Some(path_index) =
                (1..=unique_depth).find(|&i| unique_path[i].feature == Some(feature))
            {
                incoming_zero_fraction = unique_path[path_index].zero_fraction;
                incoming_one_fraction = unique_path[path_index].one_fraction;
                unwind_path(unique_path, unique_depth, path_index);
                unique_depth -= 1;
            }

            let (parent_path, child_path) = unique_path.split_at_mut(unique_depth + 1);
            child_path[0..parent_path.len()].clone_from_slice(parent_path);
            recurse(
                tree,
                x,
                scale,
                phi,
                hot,
                child_path,
                unique_depth + 1,
                hot_zero_fraction * incoming_zero_fraction,
                incoming_one_fraction,
                Some(feature),
            );
            child_path[0..parent_path.len()].clone_from_slice(parent_path);
            recurse(
                tree,
                x,
                scale,
                phi,
                cold,
                child_path,
                unique_depth + 1,
                cold_zero_fraction * incoming_zero_fraction,
                0.0,
                Some(feature),
            );
        }
    }
}

fn extend_path(
    unique_path: &mut [PathItem],
    unique_depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    unique_path[unique_depth] = PathItem {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if unique_depth == 0 { 1.0 } else { 0.0 },
    };
    if unique_depth == 0 {
        return;
    }
    for i in (0..unique_depth).rev() {
        unique_path[i + 1].pweight +=
            one_fraction * unique_path[i].pweight * (i + 1) as f64 / (unique_depth + 1) as f64;
        unique_path[i].pweight =
            zero_fraction * unique_path[i].pweight * (unique_depth - i) as f64
                / (unique_depth + 1) as f64;
    }
}

fn unwind_path(unique_path: &mut [PathItem], unique_depth: usize, path_index: usize) {
    let one_fraction = unique_path[path_index].one_fraction;
    let zero_fraction = unique_path[path_index].zero_fraction;
    let mut next_one_portion = unique_path[unique_depth].pweight;
    for i in (0..unique_depth).rev() {
        if one_fraction != 0.0 {
            let tmp = unique_path[i].pweight;
            unique_path[i].pweight =
                next_one_portion * (unique_depth + 1) as f64 / ((i + 1) as f64 * one_fraction);
            next_one_portion = tmp
                - unique_path[i].pweight * zero_fraction * (unique_depth - i) as f64
                    / (unique_depth + 1) as f64;
        } else {
            unique_path[i].pweight = unique_path[i].pweight * (unique_depth + 1) as f64
                / (zero_fraction * (unique_depth - i) as f64);
        }
    }
    for i in path_index..unique_depth {
        unique_path[i].feature = unique_path[i + 1].feature;
        unique_path[i].zero_fraction = unique_path[i + 1].zero_fraction;
        unique_path[i].one_fraction = unique_path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(unique_path: &[PathItem], unique_depth: usize, path_index: usize) -> f64 {
    let one_fraction = unique_path[path_index].one_fraction;
    let zero_fraction = unique_path[path_index].zero_fraction;
    let mut next_one_portion = unique_path[unique_depth].pweight;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        for i in (0..unique_depth).rev() {
            let tmp = next_one_portion / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one_portion =
                unique_path[i].pweight - tmp * zero_fraction * (unique_depth - i) as f64;
        }
    } else {
        for i in (0..unique_depth).rev() {
            total += unique_path[i].pweight / (zero_fraction * (unique_depth - i) as f64);
        }
    }
    total * (unique_depth + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{fit_gbt, GbtParams};
    use crate::matrix::DenseMatrix;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Conditional expectation of a tree output given the features in
    /// `subset` take the sample's observed values and the rest marginalize
    /// along cover fractions. Independent of the production path algorithm.
    fn cond_expect(tree: &Tree, node: usize, x: &[f64], subset: u32) -> f64 {
        match &tree.nodes[node] {
            TreeNode::Leaf { weight, .. } => *weight,
            TreeNode::Internal { feature, threshold, left, right, .. } => {
                let l = *left as usize;
                let r = *right as usize;
                if subset & (1 << feature) != 0 {
                    let next = if x[*feature as usize] < *threshold { l } else { r };
                    cond_expect(tree, next, x, subset)
                } else {
                    let cl = tree.nodes[l].cover();
                    let cr = tree.nodes[r].cover();
                    (cl * cond_expect(tree, l, x, subset)
                        + cr * cond_expect(tree, r, x, subset))
                        / (cl + cr)
                }
            }
        }
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|v| v as f64).product()
    }

    /// Exhaustive-subset Shapley values for a single tree.
    fn brute_force_shapley(tree: &Tree, x: &[f64], n_features: usize) -> Vec<f64> {
        let m = n_features;
        let mut phi = vec![0.0; m];
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            for mask in 0..(1u32 << others.len()) {
                let mut subset = 0u32;
                let mut size = 0usize;
                for (bit, &j) in others.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        subset |= 1 << j;
                        size += 1;
                    }
                }
                let weight = factorial(size) * factorial(m - size - 1) / factorial(m);
                let with = cond_expect(tree, 0, x, subset | (1 << i));
                let without = cond_expect(tree, 0, x, subset);
                phi[i] += weight * (with - without);
            }
        }
        phi
    }

    fn one_split_model() -> GbtModel {
        GbtModel {
            params: GbtParams { learning_rate: 1.0, ..GbtParams::default() },
            base_score: 0.0,
            n_features: 3,
            trees: vec![Tree {
                nodes: vec![
                    TreeNode::Internal {
                        feature: 0,
                        threshold: 0.5,
                        left: 1,
                        right: 2,
                        cover: 2.0,
                    },
                    TreeNode::Leaf { weight: -1.0, cover: 1.0 },
                    TreeNode::Leaf { weight: 1.0, cover: 1.0 },
                ],
            }],
        }
    }

    #[test]
    fn single_split_equal_cover() {
        let model = one_split_model();
        let attr = tree_shapley(&model, &[0.7, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(attr.base_value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(attr.phi[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(attr.phi[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(attr.phi[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_model_attributes_nothing() {
        let model = GbtModel {
            params: GbtParams::default(),
            base_score: 0.3,
            trees: vec![],
            n_features: 4,
        };
        let attr = tree_shapley(&model, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(attr.phi, vec![0.0; 4]);
        assert_eq!(attr.base_value, 0.3);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let model = one_split_model();
        assert!(matches!(
            tree_shapley(&model, &[0.1]),
            Err(GbtError::DimMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn matches_exhaustive_subsets_on_small_trees() {
        // Hand-built depth-2 tree over 3 features with unequal covers,
        // including a repeated feature along one path.
        let tree = Tree {
            nodes: vec![
                TreeNode::Internal { feature: 0, threshold: 0.0, left: 1, right: 2, cover: 10.0 },
                TreeNode::Internal { feature: 1, threshold: -1.0, left: 3, right: 4, cover: 6.0 },
                TreeNode::Internal { feature: 0, threshold: 2.0, left: 5, right: 6, cover: 4.0 },
                TreeNode::Leaf { weight: -2.0, cover: 2.0 },
                TreeNode::Leaf { weight: 0.5, cover: 4.0 },
                TreeNode::Leaf { weight: 1.5, cover: 3.0 },
                TreeNode::Leaf { weight: 3.0, cover: 1.0 },
            ],
        };
        let model = GbtModel {
            params: GbtParams { learning_rate: 1.0, ..GbtParams::default() },
            base_score: 0.0,
            trees: vec![tree.clone()],
            n_features: 3,
        };
        for x in [
            [0.5, -2.0, 9.0],
            [-0.5, 0.0, 1.0],
            [2.5, -1.5, -3.0],
            [1.0, 1.0, 1.0],
        ] {
            let attr = tree_shapley(&model, &x).unwrap();
            let expected = brute_force_shapley(&tree, &x, 3);
            for (a, e) in attr.phi.iter().zip(&expected) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn matches_exhaustive_subsets_on_fitted_depth2_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 200;
        let mut x = DenseMatrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..3 {
                x.set(i, j, rng.gen_range(-2.0..2.0));
            }
            y.push(u8::from(x.get(i, 0) + x.get(i, 1) * x.get(i, 2) > 0.0));
        }
        let params = GbtParams {
            n_estimators: 8,
            max_depth: 2,
            learning_rate: 0.4,
            ..GbtParams::default()
        };
        let model = fit_gbt(&x, &y, &vec![1.0; n], &params).unwrap();

        for i in [0usize, 7, 42, 133] {
            let row = x.row(i);
            let attr = tree_shapley(&model, row).unwrap();
            let mut expected = vec![0.0; 3];
            for tree in &model.trees {
                let phi = brute_force_shapley(tree, row, 3);
                for (e, p) in expected.iter_mut().zip(&phi) {
                    *e += params.learning_rate * p;
                }
            }
            for (a, e) in attr.phi.iter().zip(&expected) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn local_accuracy_on_trained_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400;
        let k = 6;
        let mut x = DenseMatrix::zeros(n, k);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..k {
                x.set(i, j, rng.gen_range(-3.0..3.0));
            }
            y.push(u8::from(x.get(i, 0) - x.get(i, 3) + 0.3 * x.get(i, 5) > 0.2));
        }
        let params = GbtParams {
            n_estimators: 25,
            max_depth: 4,
            learning_rate: 0.2,
            ..GbtParams::default()
        };
        let model = fit_gbt(&x, &y, &vec![1.0; n], &params).unwrap();
        let margins = model.predict_margin(&x).unwrap();
        for i in 0..n {
            let attr = tree_shapley(&model, x.row(i)).unwrap();
            let reconstructed = attr.base_value + attr.phi.iter().sum::<f64>();
            assert!(
                (reconstructed - margins[i]).abs() < 1e-9,
                "row {i}: {reconstructed} vs {}",
                margins[i]
            );
        }
    }
}
