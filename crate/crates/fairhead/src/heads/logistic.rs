//! L2-regularized logistic regression fit by iteratively reweighted least
//! squares (full Newton steps) to a tight gradient norm, so refits are
//! reproducible to machine precision.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HeadError;
use crate::matrix::DenseMatrix;

const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// L2 penalty on the feature weights; the intercept is unpenalized.
    pub l2: f64,
    pub max_iter: usize,
    /// Infinity-norm gradient tolerance.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams { l2: 1e-4, max_iter: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>, HeadError> {
        if x.n_cols() != self.weights.len() {
            return Err(HeadError::DimMismatch { expected: self.weights.len(), got: x.n_cols() });
        }
        Ok(x.rows().map(|r| sigmoid(self.decision(r))).collect())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Gradient and Hessian of the penalized negative log-likelihood, accumulated
/// over fixed-size row chunks combined in order (thread-count invariant).
fn newton_system(
    x: &DenseMatrix,
    y: &[u8],
    sw: &[f64],
    beta: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let k = x.n_cols();
    let d = k + 1; // intercept last
    let n = x.n_rows();
    let chunks: Vec<(DVector<f64>, DMatrix<f64>)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|rows| {
            let mut grad = DVector::zeros(d);
            let mut hess = DMatrix::zeros(d, d);
            for &i in rows {
                let row = x.row(i);
                let eta = beta[k] + row.iter().zip(&beta[..k]).map(|(v, b)| v * b).sum::<f64>();
                let p = sigmoid(eta).clamp(1e-12, 1.0 - 1e-12);
                let r = sw[i] * (p - f64::from(y[i]));
                let w = sw[i] * p * (1.0 - p);
                for a in 0..k {
                    grad[a] += r * row[a];
                    for b in a..k {
                        hess[(a, b)] += w * row[a] * row[b];
                    }
                    hess[(a, k)] += w * row[a];
                }
                grad[k] += r;
                hess[(k, k)] += w;
            }
            (grad, hess)
        })
        .collect();

    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    for (g, h) in chunks {
        grad += g;
        hess += h;
    }
    for a in 0..d {
        for b in 0..a {
            hess[(a, b)] = hess[(b, a)];
        }
    }
    (grad, hess)
}

pub fn fit_logistic(
    x: &DenseMatrix,
    y: &[u8],
    sample_weights: &[f64],
    params: &LogisticParams,
) -> Result<LogisticModel, HeadError> {
    let n = x.n_rows();
    let k = x.n_cols();
    assert_eq!(y.len(), n);
    assert_eq!(sample_weights.len(), n);
    let has_pos = y.iter().zip(sample_weights).any(|(&l, &w)| l == 1 && w > 0.0);
    let has_neg = y.iter().zip(sample_weights).any(|(&l, &w)| l == 0 && w > 0.0);
    if !has_pos || !has_neg {
        return Err(HeadError::SingleClass);
    }

    let mut beta = vec![0.0; k + 1];
    for _ in 0..params.max_iter {
        let (mut grad, mut hess) = newton_system(x, y, sample_weights, &beta);
        for a in 0..k {
            grad[a] += params.l2 * beta[a];
            hess[(a, a)] += params.l2;
        }
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < params.tol {
            break;
        }
        // Cholesky with escalating jitter if the system is near-singular.
        let mut jitter = 0.0;
        let step = loop {
            let mut h = hess.clone();
            if jitter > 0.0 {
                for a in 0..=k {
                    h[(a, a)] += jitter;
                }
            }
            match h.cholesky() {
                Some(chol) => break chol.solve(&grad),
                None => {
                    jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
                    assert!(jitter < 1.0, "hessian persistently singular");
                }
            }
        };
        for a in 0..=k {
            beta[a] -= step[a];
        }
    }

    let intercept = beta[k];
    beta.truncate(k);
    Ok(LogisticModel { weights: beta, intercept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_separation_gives_half_at_midpoint() {
        let x = DenseMatrix::from_rows(&[
            vec![-1.0],
            vec![-1.0],
            vec![-1.0],
            vec![1.0],
            vec![1.0],
            vec![1.0],
        ]);
        let y = [0, 0, 0, 1, 1, 1];
        let model = fit_logistic(&x, &y, &[1.0; 6], &LogisticParams::default()).unwrap();
        let p = model.predict_proba(&DenseMatrix::from_rows(&[vec![0.0]])).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-6);
        assert!(model.weights[0] > 1.0, "separated data should get a steep slope");
    }

    #[test]
    fn recovers_known_coefficients() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 6000;
        let mut x = DenseMatrix::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a = rng.gen_range(-2.0..2.0);
            let b = rng.gen_range(-2.0..2.0);
            x.set(i, 0, a);
            x.set(i, 1, b);
            let p = sigmoid(1.5 * a - 0.7 * b + 0.3);
            y.push(u8::from(rng.gen::<f64>() < p));
        }
        let model = fit_logistic(&x, &y, &vec![1.0; n], &LogisticParams::default()).unwrap();
        assert!((model.weights[0] - 1.5).abs() < 0.15, "{:?}", model.weights);
        assert!((model.weights[1] + 0.7).abs() < 0.15, "{:?}", model.weights);
        assert!((model.intercept - 0.3).abs() < 0.15);
    }

    #[test]
    fn single_class_rejected() {
        let x = DenseMatrix::zeros(3, 1);
        assert!(matches!(
            fit_logistic(&x, &[1, 1, 1], &[1.0; 3], &LogisticParams::default()),
            Err(HeadError::SingleClass)
        ));
    }

    #[test]
    fn duplicate_equals_double_weight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let n = 80;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            rows.push(vec![a, a * a]);
            y.push(u8::from(rng.gen::<f64>() < sigmoid(2.0 * a)));
        }
        let x = DenseMatrix::from_rows(&rows);
        let mut w = vec![1.0; n];
        w[5] = 2.0;
        let doubled = fit_logistic(&x, &y, &w, &LogisticParams::default()).unwrap();

        rows.push(rows[5].clone());
        let mut y2 = y.clone();
        y2.push(y[5]);
        let x2 = DenseMatrix::from_rows(&rows);
        let dup = fit_logistic(&x2, &y2, &vec![1.0; n + 1], &LogisticParams::default()).unwrap();

        for (a, b) in doubled.weights.iter().zip(&dup.weights) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(doubled.intercept, dup.intercept, epsilon = 1e-9);
    }

    #[test]
    fn thread_count_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let mut x = DenseMatrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..3 {
                x.set(i, j, rng.gen_range(-1.0..1.0));
            }
            y.push(u8::from(rng.gen::<f64>() < sigmoid(x.get(i, 0))));
        }
        let w = vec![1.0; n];
        let p1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let p4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let m1 = p1.install(|| fit_logistic(&x, &y, &w, &LogisticParams::default())).unwrap();
        let m4 = p4.install(|| fit_logistic(&x, &y, &w, &LogisticParams::default())).unwrap();
        assert_eq!(m1.weights, m4.weights);
        assert_eq!(m1.intercept, m4.intercept);
    }
}
