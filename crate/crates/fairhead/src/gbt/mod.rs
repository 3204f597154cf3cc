//! From-scratch gradient-boosted decision trees with Newton boosting on
//! logistic loss, plus exact per-tree Shapley attribution.
//!
//! Split finding is exact greedy (no histogram approximation): every feature
//! and every midpoint between consecutive distinct sorted values is a
//! candidate. Equal-gain ties break to the lowest feature index, then the
//! lowest threshold, so fits are bitwise identical across runs and thread
//! counts.

mod shap;
mod train;

pub use shap::{tree_shapley, ShapleyAttribution};
pub use train::fit_gbt;

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::matrix::DenseMatrix;

pub const GBT_MAGIC: &[u8; 8] = b"FAIRGBT1";

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("dimension mismatch: model expects {expected} features, input has {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("bad magic in model file")]
    BadMagic,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Boosting hyperparameters. `seed` is carried for config parity but unused:
/// exact greedy training has no stochastic component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub lambda_l2: f64,
    pub gamma: f64,
    pub min_child_hessian: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            learning_rate: 0.05,
            n_estimators: 150,
            max_depth: 10,
            lambda_l2: 1.0,
            gamma: 0.0,
            min_child_hessian: 1.0,
            seed: 0,
        }
    }
}

/// One node of a regression tree. `cover` is the sum of training hessians
/// that reached the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl TreeNode {
    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Internal { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }
}

/// A binary regression tree; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Routes a row to its leaf and returns the leaf weight.
    /// Routing rule: `x[feature] < threshold` goes left.
    pub fn leaf_weight(&self, row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { weight, .. } => return *weight,
                TreeNode::Internal { feature, threshold, left, right, .. } => {
                    node = if row[*feature as usize] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn depth_from(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => {
                    1 + depth_from(nodes, *left as usize).max(depth_from(nodes, *right as usize))
                }
            }
        }
        depth_from(&self.nodes, 0)
    }

    /// Cover-weighted expectation of the tree output over the training
    /// distribution.
    pub fn expectation(&self) -> f64 {
        fn expect(nodes: &[TreeNode], i: usize) -> f64 {
            match &nodes[i] {
                TreeNode::Leaf { weight, .. } => *weight,
                TreeNode::Internal { left, right, .. } => {
                    let l = *left as usize;
                    let r = *right as usize;
                    let cl = nodes[l].cover();
                    let cr = nodes[r].cover();
                    (cl * expect(nodes, l) + cr * expect(nodes, r)) / (cl + cr)
                }
            }
        }
        expect(&self.nodes, 0)
    }
}

/// Trained boosted ensemble: a log-odds base score plus scaled tree outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GbtModel {
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        let mut m = self.base_score;
        for tree in &self.trees {
            m += self.params.learning_rate * tree.leaf_weight(row);
        }
        m
    }

    /// Raw log-odds margins: `base_score + sum_t lr * leaf_t(x)`.
    pub fn predict_margin(&self, x: &DenseMatrix) -> Result<Vec<f64>, GbtError> {
        if x.n_cols() != self.n_features {
            return Err(GbtError::DimMismatch { expected: self.n_features, got: x.n_cols() });
        }
        Ok(x.rows().map(|row| self.margin_row(row)).collect())
    }

    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>, GbtError> {
        Ok(self.predict_margin(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(GBT_MAGIC);
        binio::write_f64(&mut out, self.params.learning_rate).unwrap();
        binio::write_u32(&mut out, self.params.n_estimators as u32).unwrap();
        binio::write_u32(&mut out, self.params.max_depth as u32).unwrap();
        binio::write_f64(&mut out, self.params.lambda_l2).unwrap();
        binio::write_f64(&mut out, self.params.gamma).unwrap();
        binio::write_f64(&mut out, self.params.min_child_hessian).unwrap();
        binio::write_u64(&mut out, self.params.seed).unwrap();
        binio::write_u32(&mut out, self.n_features as u32).unwrap();
        binio::write_f64(&mut out, self.base_score).unwrap();
        binio::write_u32(&mut out, self.trees.len() as u32).unwrap();
        for tree in &self.trees {
            write_preorder(&mut out, &tree.nodes, 0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GbtError> {
        let mut r = bytes;
        let magic = binio::read_magic(&mut r)?;
        if &magic != GBT_MAGIC {
            return Err(GbtError::BadMagic);
        }
        let params = GbtParams {
            learning_rate: binio::read_f64(&mut r)?,
            n_estimators: binio::read_u32(&mut r)? as usize,
            max_depth: binio::read_u32(&mut r)? as usize,
            lambda_l2: binio::read_f64(&mut r)?,
            gamma: binio::read_f64(&mut r)?,
            min_child_hessian: binio::read_f64(&mut r)?,
            seed: binio::read_u64(&mut r)?,
        };
        let n_features = binio::read_u32(&mut r)? as usize;
        let base_score = binio::read_f64(&mut r)?;
        let n_trees = binio::read_u32(&mut r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let mut nodes = Vec::new();
            read_preorder(&mut r, &mut nodes)?;
            trees.push(Tree { nodes });
        }
        Ok(GbtModel { params, base_score, trees, n_features })
    }

    pub fn save(&self, path: &Path) -> Result<(), GbtError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GbtError> {
        let mut bytes = Vec::new();
        BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn write_preorder(out: &mut Vec<u8>, nodes: &[TreeNode], i: usize) {
    match &nodes[i] {
        TreeNode::Leaf { weight, cover } => {
            out.push(1);
            binio::write_f64(out, *weight).unwrap();
            binio::write_f64(out, *cover).unwrap();
        }
        TreeNode::Internal { feature, threshold, left, right, cover } => {
            out.push(0);
            binio::write_u32(out, *feature).unwrap();
            binio::write_f64(out, *threshold).unwrap();
            binio::write_f64(out, *cover).unwrap();
            write_preorder(out, nodes, *left as usize);
            write_preorder(out, nodes, *right as usize);
        }
    }
}

fn read_preorder(r: &mut &[u8], nodes: &mut Vec<TreeNode>) -> Result<u32, GbtError> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    if tag[0] == 1 {
        let weight = binio::read_f64(r)?;
        let cover = binio::read_f64(r)?;
        nodes.push(TreeNode::Leaf { weight, cover });
        Ok(nodes.len() as u32 - 1)
    } else {
        let feature = binio::read_u32(r)?;
        let threshold = binio::read_f64(r)?;
        let cover = binio::read_f64(r)?;
        let idx = nodes.len();
        nodes.push(TreeNode::Internal { feature, threshold, left: 0, right: 0, cover });
        let left = read_preorder(r, nodes)?;
        let right = read_preorder(r, nodes)?;
        if let TreeNode::Internal { left: l, right: rt, .. } = &mut nodes[idx] {
            *l = left;
            *rt = right;
        }
        Ok(idx as u32)
    }
}

/// Newton statistics of the logistic loss at probability `p` and label `y`:
/// gradient `p - y`, hessian `p (1 - p)`. Callers clamp `p` away from 0 and 1.
pub fn logloss_grad_hess(p: f64, y: u8) -> (f64, f64) {
    (p - f64::from(y), p * (1.0 - p))
}

/// Second-order gain of splitting a node with children statistics
/// `(GL, HL)` and `(GR, HR)` under L2 penalty `lambda_l2` and split penalty
/// `gamma`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda_l2: f64, gamma: f64) -> f64 {
    0.5 * (gl * gl / (hl + lambda_l2) + gr * gr / (hr + lambda_l2)
        - (gl + gr) * (gl + gr) / (hl + hr + lambda_l2))
        - gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grad_hess_formulas() {
        assert_eq!(logloss_grad_hess(0.5, 1), (-0.5, 0.25));
        let (g, h) = logloss_grad_hess(0.7, 1);
        assert_abs_diff_eq!(g, -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.21, epsilon = 1e-15);
        let (g, h) = logloss_grad_hess(0.2, 0);
        assert_abs_diff_eq!(g, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.16, epsilon = 1e-15);
    }

    #[test]
    fn split_gain_formulas() {
        assert_abs_diff_eq!(split_gain(2.0, 4.0, -2.0, 4.0, 1.0, 0.0), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(split_gain(2.0, 4.0, -2.0, 4.0, 1.0, 0.5), 0.3, epsilon = 1e-15);
        assert_eq!(split_gain(1.0, 1.0, 1.0, 1.0, 0.0, 0.0), 0.0);
    }

    fn one_split_tree() -> GbtModel {
        GbtModel {
            params: GbtParams { learning_rate: 1.0, n_estimators: 1, ..GbtParams::default() },
            base_score: 0.0,
            n_features: 2,
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
    fn hand_built_tree_prediction() {
        let model = one_split_tree();
        let x = DenseMatrix::from_rows(&[vec![0.7, 0.0], vec![0.2, 9.0]]);
        let margins = model.predict_margin(&x).unwrap();
        assert_eq!(margins, vec![1.0, -1.0]);
        let probas = model.predict_proba(&x).unwrap();
        assert_abs_diff_eq!(probas[0], 0.7310585786300049, epsilon = 1e-12);
    }

    #[test]
    fn empty_tree_list_predicts_base_probability() {
        let model = GbtModel {
            params: GbtParams::default(),
            base_score: (0.25f64 / 0.75).ln(),
            trees: vec![],
            n_features: 3,
        };
        let x = DenseMatrix::zeros(4, 3);
        for p in model.predict_proba(&x).unwrap() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn serialization_round_trip() {
        let model = one_split_tree();
        let bytes = model.to_bytes();
        let back = GbtModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert!(matches!(GbtModel::from_bytes(b"FAIRGBT9rest"), Err(GbtError::BadMagic)));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let model = one_split_tree();
        let x = DenseMatrix::zeros(1, 5);
        assert!(matches!(
            model.predict_margin(&x),
            Err(GbtError::DimMismatch { expected: 2, got: 5 })
        ));
    }
}
