//! The classifier-head zoo and the per-condition multi-head wrapper.
//!
//! Every head trains on (features, binary labels, sample weights) and exposes
//! `predict_proba`. The multi-head wrapper trains one independent head per
//! medical condition, masking that condition's missing labels; missing labels
//! are never imputed.

mod cart;
mod knn;
mod logistic;
mod mlp;

pub use cart::{fit_cart, fit_forest, CartNode, CartTree, ForestModel, ForestParams, TreeHeadParams};
pub use knn::{fit_knn, KnnModel, KnnParams};
pub use logistic::{fit_logistic, LogisticModel, LogisticParams};
pub use mlp::{
    fit_mlp, train_adversarial_mlp, AdversarialParams, AttributeLabels, MlpModel, MlpParams,
};

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::dataio::Label;
use crate::gbt::{fit_gbt, GbtError, GbtModel, GbtParams};
use crate::linalg::{pca_transform, LinalgError, PcaModel};
use crate::matrix::DenseMatrix;

pub const HEAD_MAGIC: &[u8; 8] = b"FAIRHED1";
pub const MULTIHEAD_MAGIC: &[u8; 8] = b"FAIRMHD1";

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("attribute has fewer than 2 groups")]
    SingleGroup,
    #[error("unsupported parameters: {0}")]
    UnsupportedParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("condition `{condition}`: {source}")]
    Condition {
        condition: String,
        #[source]
        source: Box<HeadError>,
    },
    #[error("bad magic in head model file")]
    BadMagic,
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every selectable classifier head; each kind maps to exactly one trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    Gbt,
    LogisticRegression,
    DecisionTree,
    RandomForest,
    BalancedRandomForest,
    Mlp,
    Knn,
    AdversarialMlp,
}

impl HeadKind {
    pub const ALL: [HeadKind; 8] = [
        HeadKind::Gbt,
        HeadKind::LogisticRegression,
        HeadKind::DecisionTree,
        HeadKind::RandomForest,
        HeadKind::BalancedRandomForest,
        HeadKind::Mlp,
        HeadKind::Knn,
        HeadKind::AdversarialMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Gbt => "gbt",
            HeadKind::LogisticRegression => "logistic_regression",
            HeadKind::DecisionTree => "decision_tree",
            HeadKind::RandomForest => "random_forest",
            HeadKind::BalancedRandomForest => "balanced_random_forest",
            HeadKind::Mlp => "mlp",
            HeadKind::Knn => "knn",
            HeadKind::AdversarialMlp => "adversarial_mlp",
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeadKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown head `{s}`"))
    }
}

/// Per-kind hyperparameters bundled so the experiment config can carry one
/// value regardless of the selected head.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadParams {
    pub gbt: GbtParams,
    pub logistic: LogisticParams,
    pub tree: TreeHeadParams,
    pub forest: ForestParams,
    pub mlp: MlpParams,
    pub knn: KnnParams,
    pub adversarial: AdversarialParams,
}

/// A fitted head of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadModel {
    Gbt(GbtModel),
    Logistic(LogisticModel),
    DecisionTree(CartTree),
    RandomForest(ForestModel),
    BalancedRandomForest(ForestModel),
    Mlp(MlpModel),
    Knn(KnnModel),
}

impl HeadModel {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadModel::Gbt(_) => HeadKind::Gbt,
            HeadModel::Logistic(_) => HeadKind::LogisticRegression,
            HeadModel::DecisionTree(_) => HeadKind::DecisionTree,
            HeadModel::RandomForest(_) => HeadKind::RandomForest,
            HeadModel::BalancedRandomForest(_) => HeadKind::BalancedRandomForest,
            HeadModel::Mlp(_) => HeadKind::Mlp,
            HeadModel::Knn(_) => HeadKind::Knn,
        }
    }

    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>, HeadError> {
        match self {
            HeadModel::Gbt(m) => Ok(m.predict_proba(x)?),
            HeadModel::Logistic(m) => m.predict_proba(x),
            HeadModel::DecisionTree(t) => Ok(x.rows().map(|r| t.predict_row(r)).collect()),
            HeadModel::RandomForest(f) | HeadModel::BalancedRandomForest(f) => {
                if x.n_cols() != f.n_features {
                    return Err(HeadError::DimMismatch {
                        expected: f.n_features,
                        got: x.n_cols(),
                    });
                }
                Ok(x.rows().map(|r| f.predict_row(r)).collect())
            }
            HeadModel::Mlp(m) => m.predict_proba(x),
            HeadModel::Knn(m) => m.predict_proba(x),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(HEAD_MAGIC);
        match self {
            HeadModel::Gbt(m) => {
                out.push(0);
                let payload = m.to_bytes();
                binio::write_u64(&mut out, payload.len() as u64).unwrap();
                out.extend_from_slice(&payload);
            }
            HeadModel::Logistic(m) => {
                out.push(1);
                binio::write_u32(&mut out, m.weights.len() as u32).unwrap();
                for v in &m.weights {
                    binio::write_f64(&mut out, *v).unwrap();
                }
                binio::write_f64(&mut out, m.intercept).unwrap();
            }
            HeadModel::DecisionTree(t) => {
                out.push(2);
                write_cart_tree(&mut out, t);
            }
            HeadModel::RandomForest(f) => {
                out.push(3);
                write_forest(&mut out, f);
            }
            HeadModel::BalancedRandomForest(f) => {
                out.push(4);
                write_forest(&mut out, f);
            }
            HeadModel::Mlp(m) => {
                out.push(5);
                binio::write_u32(&mut out, m.w1.n_rows() as u32).unwrap();
                binio::write_u32(&mut out, m.w1.n_cols() as u32).unwrap();
                for v in m.w1.as_slice() {
                    binio::write_f64(&mut out, *v).unwrap();
                }
                for v in &m.b1 {
                    binio::write_f64(&mut out, *v).unwrap();
                }
                for v in &m.w2 {
                    binio::write_f64(&mut out, *v).unwrap();
                }
                binio::write_f64(&mut out, m.b2).unwrap();
            }
            HeadModel::Knn(m) => {
                out.push(6);
                binio::write_u32(&mut out, m.train_x.n_rows() as u32).unwrap();
                binio::write_u32(&mut out, m.train_x.n_cols() as u32).unwrap();
                binio::write_u32(&mut out, m.k_neighbors as u32).unwrap();
                for v in m.train_x.as_slice() {
                    binio::write_f64(&mut out, *v).unwrap();
                }
                out.extend_from_slice(&m.train_y);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeadError> {
        let mut r = bytes;
        let magic = binio::read_magic(&mut r)?;
        if &magic != HEAD_MAGIC {
            return Err(HeadError::BadMagic);
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        match tag[0] {
            0 => {
                let len = binio::read_u64(&mut r)? as usize;
                Ok(HeadModel::Gbt(GbtModel::from_bytes(&r[..len])?))
            }
            1 => {
                let k = binio::read_u32(&mut r)? as usize;
                let mut weights = Vec::with_capacity(k);
                for _ in 0..k {
                    weights.push(binio::read_f64(&mut r)?);
                }
                let intercept = binio::read_f64(&mut r)?;
                Ok(HeadModel::Logistic(LogisticModel { weights, intercept }))
            }
            2 => Ok(HeadModel::DecisionTree(read_cart_tree(&mut r)?)),
            3 => Ok(HeadModel::RandomForest(read_forest(&mut r)?)),
            4 => Ok(HeadModel::BalancedRandomForest(read_forest(&mut r)?)),
            5 => {
                let rows = binio::read_u32(&mut r)? as usize;
                let cols = binio::read_u32(&mut r)? as usize;
                let mut w1 = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    w1.push(binio::read_f64(&mut r)?);
                }
                let mut b1 = Vec::with_capacity(rows);
                for _ in 0..rows {
                    b1.push(binio::read_f64(&mut r)?);
                }
                let mut w2 = Vec::with_capacity(rows);
                for _ in 0..rows {
                    w2.push(binio::read_f64(&mut r)?);
                }
                let b2 = binio::read_f64(&mut r)?;
                Ok(HeadModel::Mlp(MlpModel {
                    w1: DenseMatrix::from_vec(rows, cols, w1),
                    b1,
                    w2,
                    b2,
                }))
            }
            6 => {
                let n = binio::read_u32(&mut r)? as usize;
                let k = binio::read_u32(&mut r)? as usize;
                let k_neighbors = binio::read_u32(&mut r)? as usize;
                let mut data = Vec::with_capacity(n * k);
                for _ in 0..n * k {
                    data.push(binio::read_f64(&mut r)?);
                }
                let mut train_y = vec![0u8; n];
                r.read_exact(&mut train_y)?;
                Ok(HeadModel::Knn(KnnModel {
                    train_x: DenseMatrix::from_vec(n, k, data),
                    train_y,
                    k_neighbors,
                }))
            }
            t => Err(HeadError::UnsupportedParams(format!("unknown head tag {t}"))),
        }
    }
}

fn write_cart_tree(out: &mut Vec<u8>, tree: &CartTree) {
    binio::write_u32(out, tree.nodes.len() as u32).unwrap();
    for node in &tree.nodes {
        match node {
            CartNode::Internal { feature, threshold, left, right } => {
                out.push(0);
                binio::write_u32(out, *feature).unwrap();
                binio::write_f64(out, *threshold).unwrap();
                binio::write_u32(out, *left).unwrap();
                binio::write_u32(out, *right).unwrap();
            }
            CartNode::Leaf { proba } => {
                out.push(1);
                binio::write_f64(out, *proba).unwrap();
            }
        }
    }
}

fn read_cart_tree(r: &mut &[u8]) -> Result<CartTree, HeadError> {
    let n = binio::read_u32(r)? as usize;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] == 0 {
            nodes.push(CartNode::Internal {
                feature: binio::read_u32(r)?,
                threshold: binio::read_f64(r)?,
                left: binio::read_u32(r)?,
                right: binio::read_u32(r)?,
            });
        } else {
            nodes.push(CartNode::Leaf { proba: binio::read_f64(r)? });
        }
    }
    Ok(CartTree { nodes })
}

fn write_forest(out: &mut Vec<u8>, forest: &ForestModel) {
    binio::write_u32(out, forest.n_features as u32).unwrap();
    binio::write_u32(out, forest.trees.len() as u32).unwrap();
    for tree in &forest.trees {
        write_cart_tree(out, tree);
    }
}

fn read_forest(r: &mut &[u8]) -> Result<ForestModel, HeadError> {
    let n_features = binio::read_u32(r)? as usize;
    let n_trees = binio::read_u32(r)? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        trees.push(read_cart_tree(r)?);
    }
    Ok(ForestModel { trees, n_features })
}

/// Trains one head of the requested kind. Randomized trainers derive all
/// randomness from `seed`; deterministic trainers ignore it.
pub fn train_head(
    kind: HeadKind,
    x: &DenseMatrix,
    y: &[u8],
    weights: &[f64],
    params: &HeadParams,
    seed: u64,
) -> Result<HeadModel, HeadError> {
    match kind {
        HeadKind::Gbt => Ok(HeadModel::Gbt(fit_gbt(x, y, weights, &params.gbt)?)),
        HeadKind::LogisticRegression => {
            Ok(HeadModel::Logistic(fit_logistic(x, y, weights, &params.logistic)?))
        }
        HeadKind::DecisionTree => {
            let idx: Vec<usize> = (0..x.n_rows()).collect();
            let mut rng = rand::SeedableRng::seed_from_u64(seed);
            Ok(HeadModel::DecisionTree(fit_cart(
                x,
                y,
                weights,
                &idx,
                &params.tree,
                None,
                &mut rng,
            )?))
        }
        HeadKind::RandomForest => {
            Ok(HeadModel::RandomForest(fit_forest(x, y, weights, &params.forest, false, seed)?))
        }
        HeadKind::BalancedRandomForest => Ok(HeadModel::BalancedRandomForest(fit_forest(
            x,
            y,
            weights,
            &params.forest,
            true,
            seed,
        )?)),
        HeadKind::Mlp => Ok(HeadModel::Mlp(fit_mlp(x, y, weights, &params.mlp, seed)?)),
        HeadKind::Knn => Ok(HeadModel::Knn(fit_knn(x, y, &params.knn)?)),
        HeadKind::AdversarialMlp => Err(HeadError::UnsupportedParams(
            "adversarial head needs attribute labels; use train_adversarial_mlp \
             or the experiment pipeline"
                .into(),
        )),
    }
}

/// One head per condition over a shared feature space, with the PCA model
/// that produced that space attached once fitted.
#[derive(Debug, Clone)]
pub struct MultiHeadModel {
    pub condition_names: Vec<String>,
    pub heads: Vec<HeadModel>,
    pub pca: Option<PcaModel>,
}

impl MultiHeadModel {
    pub fn with_pca(mut self, pca: PcaModel) -> Self {
        self.pca = Some(pca);
        self
    }

    /// Per-condition probabilities on already-reduced features.
    pub fn predict_proba_reduced(&self, x: &DenseMatrix) -> Result<Vec<Vec<f64>>, HeadError> {
        self.heads.iter().map(|h| h.predict_proba(x)).collect()
    }

    /// Per-condition probabilities on raw embeddings, applying the attached
    /// PCA reduction when present.
    pub fn predict_proba_embeddings(&self, x: &DenseMatrix) -> Result<Vec<Vec<f64>>, HeadError> {
        match &self.pca {
            Some(pca) => {
                let reduced = pca_transform(pca, x)?;
                self.predict_proba_reduced(&reduced)
            }
            None => self.predict_proba_reduced(x),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MULTIHEAD_MAGIC);
        binio::write_u32(&mut out, self.heads.len() as u32).unwrap();
        for (name, head) in self.condition_names.iter().zip(&self.heads) {
            binio::write_str(&mut out, name).unwrap();
            let payload = head.to_bytes();
            binio::write_u64(&mut out, payload.len() as u64).unwrap();
            out.extend_from_slice(&payload);
        }
        match &self.pca {
            Some(pca) => {
                out.push(1);
                let payload = pca.to_bytes();
                binio::write_u64(&mut out, payload.len() as u64).unwrap();
                out.extend_from_slice(&payload);
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeadError> {
        let mut r = bytes;
        let magic = binio::read_magic(&mut r)?;
        if &magic != MULTIHEAD_MAGIC {
            return Err(HeadError::BadMagic);
        }
        let n = binio::read_u32(&mut r)? as usize;
        let mut condition_names = Vec::with_capacity(n);
        let mut heads = Vec::with_capacity(n);
        for _ in 0..n {
            condition_names.push(binio::read_str(&mut r)?);
            let len = binio::read_u64(&mut r)? as usize;
            heads.push(HeadModel::from_bytes(&r[..len])?);
            r = &r[len..];
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let pca = if flag[0] == 1 {
            let len = binio::read_u64(&mut r)? as usize;
            Some(PcaModel::from_bytes(&r[..len])?)
        } else {
            None
        };
        Ok(MultiHeadModel { condition_names, heads, pca })
    }

    pub fn save(&self, path: &Path) -> Result<(), HeadError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HeadError> {
        let mut bytes = Vec::new();
        BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Rows a condition can train and evaluate on: its label is not missing.
pub fn labeled_indices(labels: &[Label], among: &[usize]) -> Vec<usize> {
    among.iter().copied().filter(|&i| labels[i] != Label::Missing).collect()
}

/// Trains one independent head per condition, excluding that condition's
/// missing labels. Per-condition seed is `seed + condition index`; failures
/// carry the condition name.
pub fn train_multihead(
    kind: HeadKind,
    x: &DenseMatrix,
    labels: &[Vec<Label>],
    condition_names: &[String],
    weights: &[f64],
    params: &HeadParams,
    seed: u64,
) -> Result<MultiHeadModel, HeadError> {
    assert_eq!(labels.len(), condition_names.len());
    assert!(!condition_names.is_empty(), "need at least one condition");
    let all: Vec<usize> = (0..x.n_rows()).collect();
    let mut heads = Vec::with_capacity(condition_names.len());
    for (c, name) in condition_names.iter().enumerate() {
        let kept = labeled_indices(&labels[c], &all);
        let head = (|| {
            if kept.is_empty() {
                return Err(HeadError::SingleClass);
            }
            let x_c = x.select_rows(&kept);
            let y_c: Vec<u8> =
                kept.iter().map(|&i| labels[c][i].as_binary().unwrap()).collect();
            let w_c: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
            train_head(kind, &x_c, &y_c, &w_c, params, seed + c as u64)
        })()
        .map_err(|e| HeadError::Condition { condition: name.clone(), source: Box::new(e) })?;
        heads.push(head);
    }
    Ok(MultiHeadModel { condition_names: condition_names.to_vec(), heads, pca: None })
}

/// Adversarial counterpart of [`train_multihead`]: every condition's head is
/// an adversarially trained perceptron against the given attributes.
pub fn train_adversarial_multihead(
    x: &DenseMatrix,
    labels: &[Vec<Label>],
    condition_names: &[String],
    weights: &[f64],
    attributes: &[AttributeLabels],
    params: &AdversarialParams,
    seed: u64,
) -> Result<MultiHeadModel, HeadError> {
    let all: Vec<usize> = (0..x.n_rows()).collect();
    let mut heads = Vec::with_capacity(condition_names.len());
    for (c, name) in condition_names.iter().enumerate() {
        let kept = labeled_indices(&labels[c], &all);
        let head = (|| {
            if kept.is_empty() {
                return Err(HeadError::SingleClass);
            }
            let x_c = x.select_rows(&kept);
            let y_c: Vec<u8> =
                kept.iter().map(|&i| labels[c][i].as_binary().unwrap()).collect();
            let w_c: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
            let attrs_c: Vec<AttributeLabels> = attributes
                .iter()
                .map(|a| AttributeLabels {
                    n_groups: a.n_groups,
                    labels: kept.iter().map(|&i| a.labels[i]).collect(),
                })
                .collect();
            let mut p = params.clone();
            p.seed = seed + c as u64;
            Ok(HeadModel::Mlp(train_adversarial_mlp(&x_c, &y_c, &w_c, &attrs_c, &p)?))
        })()
        .map_err(|e: HeadError| HeadError::Condition {
            condition: name.clone(),
            source: Box::new(e),
        })?;
        heads.push(head);
    }
    Ok(MultiHeadModel { condition_names: condition_names.to_vec(), heads, pca: None })
}

/// Conditions worth reporting: ROC-AUC strictly above 0.70 and a positive
/// rate of at least 10%.
pub fn filter_conditions(roc_aucs: &[f64], positive_rates: &[f64]) -> Vec<usize> {
    assert_eq!(roc_aucs.len(), positive_rates.len());
    (0..roc_aucs.len())
        .filter(|&c| roc_aucs[c] > 0.70 && positive_rates[c] >= 0.10)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, k: usize, seed: u64) -> (DenseMatrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DenseMatrix::zeros(n, k);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..k {
                x.set(i, j, rng.gen_range(-1.0..1.0));
            }
            y.push(u8::from(x.get(i, 0) + 0.5 * x.get(i, 1) > 0.0));
        }
        (x, y)
    }

    #[test]
    fn filter_conditions_thresholds() {
        assert_eq!(filter_conditions(&[0.75], &[0.12]), vec![0]);
        assert_eq!(filter_conditions(&[0.70], &[0.30]), Vec::<usize>::new());
        assert_eq!(filter_conditions(&[0.90], &[0.099]), Vec::<usize>::new());
        assert_eq!(filter_conditions(&[0.71, 0.69, 0.9], &[0.1, 0.5, 0.2]), vec![0, 2]);
    }

    #[test]
    fn every_kind_trains_and_emits_probabilities() {
        let (x, y) = toy(120, 3, 1);
        let w = vec![1.0; 120];
        let mut params = HeadParams::default();
        params.gbt.n_estimators = 5;
        params.gbt.max_depth = 3;
        params.forest.n_trees = 5;
        params.mlp.epochs = 20;
        for kind in HeadKind::ALL {
            if kind == HeadKind::AdversarialMlp {
                continue;
            }
            let model = train_head(kind, &x, &y, &w, &params, 3).unwrap();
            let p = model.predict_proba(&x).unwrap();
            assert_eq!(p.len(), 120);
            assert!(
                p.iter().all(|v| (0.0..=1.0).contains(v)),
                "{kind} emitted out-of-range probabilities"
            );
        }
    }

    #[test]
    fn fixed_seed_gives_bitwise_identical_heads() {
        let (x, y) = toy(100, 3, 2);
        let w = vec![1.0; 100];
        let mut params = HeadParams::default();
        params.gbt.n_estimators = 4;
        params.forest.n_trees = 4;
        params.mlp.epochs = 10;
        for kind in HeadKind::ALL {
            if kind == HeadKind::AdversarialMlp {
                continue;
            }
            let a = train_head(kind, &x, &y, &w, &params, 7).unwrap();
            let b = train_head(kind, &x, &y, &w, &params, 7).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes(), "{kind} is not seed-deterministic");
        }
    }

    #[test]
    fn head_serialization_round_trips() {
        let (x, y) = toy(60, 2, 3);
        let w = vec![1.0; 60];
        let mut params = HeadParams::default();
        params.gbt.n_estimators = 3;
        params.forest.n_trees = 3;
        params.mlp.epochs = 5;
        for kind in HeadKind::ALL {
            if kind == HeadKind::AdversarialMlp {
                continue;
            }
            let model = train_head(kind, &x, &y, &w, &params, 5).unwrap();
            let back = HeadModel::from_bytes(&model.to_bytes()).unwrap();
            assert_eq!(back, model, "{kind} round trip");
        }
    }

    #[test]
    fn adversarial_via_train_head_is_rejected() {
        let (x, y) = toy(50, 2, 4);
        let err = train_head(
            HeadKind::AdversarialMlp,
            &x,
            &y,
            &vec![1.0; 50],
            &HeadParams::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, HeadError::UnsupportedParams(_)));
    }

    #[test]
    fn single_condition_multihead_reduces_to_train_head() {
        let (x, y) = toy(80, 2, 5);
        let w = vec![1.0; 80];
        let labels: Vec<Vec<Label>> = vec![y
            .iter()
            .map(|&v| if v == 1 { Label::Positive } else { Label::Negative })
            .collect()];
        let mut params = HeadParams::default();
        params.gbt.n_estimators = 4;
        let multi = train_multihead(
            HeadKind::Gbt,
            &x,
            &labels,
            &["cardiomegaly".to_string()],
            &w,
            &params,
            9,
        )
        .unwrap();
        let single = train_head(HeadKind::Gbt, &x, &y, &w, &params, 9).unwrap();
        assert_eq!(multi.heads[0].to_bytes(), single.to_bytes());
    }

    #[test]
    fn all_missing_condition_names_the_condition() {
        let (x, y) = toy(40, 2, 6);
        let w = vec![1.0; 40];
        let good: Vec<Label> = y
            .iter()
            .map(|&v| if v == 1 { Label::Positive } else { Label::Negative })
            .collect();
        let missing = vec![Label::Missing; 40];
        let labels = vec![good, missing];
        let names = vec!["cardiomegaly".to_string(), "edema".to_string()];
        let mut params = HeadParams::default();
        params.gbt.n_estimators = 2;
        let err =
            train_multihead(HeadKind::Gbt, &x, &labels, &names, &w, &params, 0).unwrap_err();
        match err {
            HeadError::Condition { condition, source } => {
                assert_eq!(condition, "edema");
                assert!(matches!(*source, HeadError::SingleClass));
            }
            other => panic!("expected Condition error, got {other:?}"),
        }
    }

    #[test]
    fn multihead_serialization_round_trips_with_pca() {
        let (x, y) = toy(70, 4, 8);
        let w = vec![1.0; 70];
        let labels: Vec<Vec<Label>> = vec![
            y.iter().map(|&v| if v == 1 { Label::Positive } else { Label::Negative }).collect(),
            y.iter().map(|&v| if v == 0 { Label::Positive } else { Label::Negative }).collect(),
        ];
        let names = vec!["cardiomegaly".to_string(), "edema".to_string()];
        let mut params = HeadParams::default();
        params.gbt.n_estimators = 3;
        let pca = crate::linalg::fit_pca(&x, 0.9).unwrap();
        let reduced = pca_transform(&pca, &x).unwrap();
        let model = train_multihead(HeadKind::Gbt, &reduced, &labels, &names, &w, &params, 1)
            .unwrap()
            .with_pca(pca);
        let back = MultiHeadModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(back.condition_names, model.condition_names);
        assert_eq!(back.heads, model.heads);
        assert_eq!(back.pca.as_ref().unwrap().to_bytes(), model.pca.as_ref().unwrap().to_bytes());
        // raw-embedding prediction path applies the stored reduction
        let via_raw = back.predict_proba_embeddings(&x).unwrap();
        let via_reduced = model.predict_proba_reduced(&reduced).unwrap();
        assert_eq!(via_raw, via_reduced);
    }
}
