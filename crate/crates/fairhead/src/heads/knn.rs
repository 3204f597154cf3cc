//! K-nearest-neighbors head: stores the training data and predicts the
//! neighbor vote fraction under Euclidean distance. Distance ties break by
//! sample index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HeadError;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k_neighbors: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k_neighbors: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub train_x: DenseMatrix,
    pub train_y: Vec<u8>,
    pub k_neighbors: usize,
}

pub fn fit_knn(
    x: &DenseMatrix,
    y: &[u8],
    params: &KnnParams,
) -> Result<KnnModel, HeadError> {
    if params.k_neighbors == 0 || params.k_neighbors > x.n_rows() {
        return Err(HeadError::UnsupportedParams(format!(
            "k_neighbors {} must be in 1..={}",
            params.k_neighbors,
            x.n_rows()
        )));
    }
    if !(y.iter().any(|&l| l == 1) && y.iter().any(|&l| l == 0)) {
        return Err(HeadError::SingleClass);
    }
    Ok(KnnModel { train_x: x.clone(), train_y: y.to_vec(), k_neighbors: params.k_neighbors })
}

impl KnnModel {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = self
            .train_x
            .rows()
            .enumerate()
            .map(|(i, train_row)| {
                let d: f64 =
                    train_row.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let votes: u32 = dist[..self.k_neighbors]
            .iter()
            .map(|&(_, i)| u32::from(self.train_y[i]))
            .sum();
        f64::from(votes) / self.k_neighbors as f64
    }

    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>, HeadError> {
        if x.n_cols() != self.train_x.n_cols() {
            return Err(HeadError::DimMismatch {
                expected: self.train_x.n_cols(),
                got: x.n_cols(),
            });
        }
        let rows: Vec<&[f64]> = x.rows().collect();
        Ok(rows.par_iter().map(|row| self.predict_row(row)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_vote_fraction() {
        // three train points all at distance 1 from the origin query
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]);
        let y = [1, 1, 0];
        let model = fit_knn(&x, &y, &KnnParams { k_neighbors: 3 }).unwrap();
        let p = model.predict_proba(&DenseMatrix::from_rows(&[vec![0.0, 0.0]])).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        let x = DenseMatrix::zeros(3, 2);
        let err = fit_knn(&x, &[1, 0, 1], &KnnParams { k_neighbors: 4 }).unwrap_err();
        assert!(matches!(err, HeadError::UnsupportedParams(_)));
    }

    #[test]
    fn nearest_neighbor_wins_locally() {
        let x = DenseMatrix::from_rows(&[vec![0.0], vec![10.0]]);
        let y = [0, 1];
        let model = fit_knn(&x, &y, &KnnParams { k_neighbors: 1 }).unwrap();
        let p = model
            .predict_proba(&DenseMatrix::from_rows(&[vec![1.0], vec![9.0]]))
            .unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }
}
