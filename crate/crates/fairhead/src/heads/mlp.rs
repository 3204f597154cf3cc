//! Single-hidden-layer perceptron trained by full-batch gradient descent, and
//! its adversarial variant: a shared hidden layer feeding the task output plus
//! one softmax adversary per sensitive attribute, trained with gradient
//! reversal so the shared representation sheds attribute information.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::HeadError;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden_width: usize,
    pub epochs: usize,
    pub step_size: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams { hidden_width: 64, epochs: 200, step_size: 0.05 }
    }
}

/// Adversarial training knobs. `adversary_weight` of zero degenerates to the
/// plain perceptron with the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialParams {
    pub hidden_width: usize,
    pub adversary_weight: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AdversarialParams {
    fn default() -> Self {
        AdversarialParams {
            hidden_width: 64,
            adversary_weight: 1.0,
            epochs: 200,
            step_size: 0.05,
            seed: 0,
        }
    }
}

/// Task head: tanh hidden layer plus logistic output. The hidden
/// representation stays accessible for leakage auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// hidden_width x n_features
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.w1.n_cols()
    }

    fn hidden_row(&self, row: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let wrow = self.w1.row(j);
            let z: f64 = self.b1[j] + wrow.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
            *o = z.tanh();
        }
    }

    /// Hidden-layer activations for auditing (leakage probes run on these).
    pub fn hidden_repr(&self, x: &DenseMatrix) -> Result<DenseMatrix, HeadError> {
        if x.n_cols() != self.n_features() {
            return Err(HeadError::DimMismatch { expected: self.n_features(), got: x.n_cols() });
        }
        let hidden = self.w1.n_rows();
        let mut out = DenseMatrix::zeros(x.n_rows(), hidden);
        for i in 0..x.n_rows() {
            let row = x.row(i).to_vec();
            self.hidden_row(&row, out.row_mut(i));
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>, HeadError> {
        if x.n_cols() != self.n_features() {
            return Err(HeadError::DimMismatch { expected: self.n_features(), got: x.n_cols() });
        }
        let hidden = self.w1.n_rows();
        let mut h = vec![0.0; hidden];
        Ok(x.rows()
            .map(|row| {
                self.hidden_row(row, &mut h);
                let z: f64 =
                    self.b2 + self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
                sigmoid(z)
            })
            .collect())
    }
}

/// One sensitive attribute the adversary tries to recover: per-sample group
/// ids in `0..n_groups`.
#[derive(Debug, Clone)]
pub struct AttributeLabels {
    pub n_groups: usize,
    pub labels: Vec<usize>,
}

struct AdvNet {
    w1: DenseMatrix,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    /// per adversary: (n_groups x hidden weights, biases)
    advs: Vec<(DenseMatrix, Vec<f64>)>,
}

struct AdvGrads {
    w1: DenseMatrix,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    advs: Vec<(DenseMatrix, Vec<f64>)>,
}

impl AdvNet {
    fn init(
        n_features: usize,
        hidden: usize,
        attributes: &[AttributeLabels],
        seed: u64,
    ) -> AdvNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Task-path weights are drawn first so a zero-weight adversary run
        // shares its initialization with the plain perceptron.
        let scale1 = 1.0 / (n_features as f64).sqrt();
        let mut w1 = DenseMatrix::zeros(hidden, n_features);
        for j in 0..hidden {
            for v in w1.row_mut(j).iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z * scale1;
            }
        }
        let scale2 = 1.0 / (hidden as f64).sqrt();
        let w2: Vec<f64> = (0..hidden)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale2
            })
            .collect();
        let advs = attributes
            .iter()
            .map(|attr| {
                let mut w = DenseMatrix::zeros(attr.n_groups, hidden);
                for g in 0..attr.n_groups {
                    for v in w.row_mut(g).iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = z * scale2;
                    }
                }
                (w, vec![0.0; attr.n_groups])
            })
            .collect();
        AdvNet { w1, b1: vec![0.0; hidden], w2, b2: 0.0, advs }
    }

    fn hidden(&self, row: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let wrow = self.w1.row(j);
            let z: f64 = self.b1[j] + wrow.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
            *o = z.tanh();
        }
    }

    /// Task loss minus `lambda` times the summed adversary losses, all
    /// weight-normalized: the objective the shared layer descends. Exercised
    /// by the finite-difference gradient check.
    #[cfg(test)]
    fn shared_objective(
        &self,
        x: &DenseMatrix,
        y: &[u8],
        weights: &[f64],
        attributes: &[AttributeLabels],
        lambda: f64,
    ) -> f64 {
        let w_total: f64 = weights.iter().sum();
        let hidden = self.w1.n_rows();
        let mut h = vec![0.0; hidden];
        let mut task = 0.0;
        let mut adv = 0.0;
        for i in 0..x.n_rows() {
            self.hidden(x.row(i), &mut h);
            let z: f64 = self.b2 + self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
            let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
            task -= weights[i]
                * if y[i] == 1 { p.ln() } else { (1.0 - p).ln() };
            for (a, attr) in attributes.iter().enumerate() {
                let (wa, ba) = &self.advs[a];
                let logits: Vec<f64> = (0..attr.n_groups)
                    .map(|g| {
                        ba[g] + wa.row(g).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let logsum = max
                    + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                adv -= weights[i] * (logits[attr.labels[i]] - logsum);
            }
        }
        (task - lambda * adv) / w_total
    }

    fn gradients(
        &self,
        x: &DenseMatrix,
        y: &[u8],
        weights: &[f64],
        attributes: &[AttributeLabels],
        lambda: f64,
    ) -> AdvGrads {
        let n = x.n_rows();
        let hidden = self.w1.n_rows();
        let n_features = self.w1.n_cols();
        let w_total: f64 = weights.iter().sum();

        let mut g = AdvGrads {
            w1: DenseMatrix::zeros(hidden, n_features),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            advs: self
                .advs
                .iter()
                .map(|(w, b)| (DenseMatrix::zeros(w.n_rows(), hidden), vec![0.0; b.len()]))
                .collect(),
        };

        let mut h = vec![0.0; hidden];
        let mut dh = vec![0.0; hidden];
        for i in 0..n {
            let row = x.row(i);
            self.hidden(row, &mut h);
            let z: f64 = self.b2 + self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
            let p = sigmoid(z);
            let dz = weights[i] * (p - f64::from(y[i])) / w_total;
            for j in 0..hidden {
                g.w2[j] += dz * h[j];
                dh[j] = dz * self.w2[j];
            }
            g.b2 += dz;

            for (a, attr) in attributes.iter().enumerate() {
                let (wa, _) = &self.advs[a];
                let ba = &self.advs[a].1;
                let logits: Vec<f64> = (0..attr.n_groups)
                    .map(|gr| {
                        ba[gr] + wa.row(gr).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let (gwa, gba) = &mut g.advs[a];
                for gr in 0..attr.n_groups {
                    let q = exps[gr] / sum;
                    let dza =
                        weights[i] * (q - f64::from(u8::from(gr == attr.labels[i]))) / w_total;
                    for j in 0..hidden {
                        gwa.row_mut(gr)[j] += dza * h[j];
                        // Gradient reversal: the shared layer ascends the
                        // adversary loss.
                        dh[j] -= lambda * dza * wa.row(gr)[j];
                    }
                    gba[gr] += dza;
                }
            }

            for j in 0..hidden {
                let dz1 = dh[j] * (1.0 - h[j] * h[j]);
                g.b1[j] += dz1;
                let grow = g.w1.row_mut(j);
                for (gv, xv) in grow.iter_mut().zip(row) {
                    *gv += dz1 * xv;
                }
            }
        }
        g
    }

    fn apply(&mut self, g: &AdvGrads, step: f64) {
        for j in 0..self.w1.n_rows() {
            let wrow = self.w1.row_mut(j);
            for (w, gv) in wrow.iter_mut().zip(g.w1.row(j)) {
                *w -= step * gv;
            }
            self.b1[j] -= step * g.b1[j];
            self.w2[j] -= step * g.w2[j];
        }
        self.b2 -= step * g.b2;
        for (a, (wa, ba)) in self.advs.iter_mut().enumerate() {
            let (gwa, gba) = &g.advs[a];
            for gr in 0..wa.n_rows() {
                let wrow = wa.row_mut(gr);
                for (w, gv) in wrow.iter_mut().zip(gwa.row(gr)) {
                    *w -= step * gv;
                }
                ba[gr] -= step * gba[gr];
            }
        }
    }
}

fn check_classes(y: &[u8], weights: &[f64]) -> Result<(), HeadError> {
    let has_pos = y.iter().zip(weights).any(|(&l, &w)| l == 1 && w > 0.0);
    let has_neg = y.iter().zip(weights).any(|(&l, &w)| l == 0 && w > 0.0);
    if has_pos && has_neg {
        Ok(())
    } else {
        Err(HeadError::SingleClass)
    }
}

pub fn fit_mlp(
    x: &DenseMatrix,
    y: &[u8],
    weights: &[f64],
    params: &MlpParams,
    seed: u64,
) -> Result<MlpModel, HeadError> {
    check_classes(y, weights)?;
    let adv = AdversarialParams {
        hidden_width: params.hidden_width,
        adversary_weight: 0.0,
        epochs: params.epochs,
        step_size: params.step_size,
        seed,
    };
    train_adversarial_net(x, y, weights, &[], &adv)
}

/// Trains the shared-layer network against one softmax adversary per
/// attribute and returns the task head; the adversaries are discarded but the
/// hidden representation remains auditable through the returned model.
pub fn train_adversarial_mlp(
    x: &DenseMatrix,
    y: &[u8],
    weights: &[f64],
    attributes: &[AttributeLabels],
    params: &AdversarialParams,
) -> Result<MlpModel, HeadError> {
    check_classes(y, weights)?;
    for attr in attributes {
        assert_eq!(attr.labels.len(), x.n_rows(), "attribute label length mismatch");
        let mut present = vec![false; attr.n_groups];
        for &g in &attr.labels {
            present[g] = true;
        }
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(HeadError::SingleGroup);
        }
    }
    train_adversarial_net(x, y, weights, attributes, params)
}

fn train_adversarial_net(
    x: &DenseMatrix,
    y: &[u8],
    weights: &[f64],
    attributes: &[AttributeLabels],
    params: &AdversarialParams,
) -> Result<MlpModel, HeadError> {
    let mut net = AdvNet::init(x.n_cols(), params.hidden_width, attributes, params.seed);
    for _ in 0..params.epochs {
        let grads = net.gradients(x, y, weights, attributes, params.adversary_weight);
        net.apply(&grads, params.step_size);
    }
    Ok(MlpModel { w1: net.w1, b1: net.b1, w2: net.w2, b2: net.b2 })
}
