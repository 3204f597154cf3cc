//! Standardization-free principal component analysis used to reduce
//! embeddings before head retraining and to produce 2-D projections for
//! detection reports.
//!
//! Components are fit by singular value decomposition of the centered train
//! matrix and never refit at transform time, so applying a frozen model to
//! val/test data cannot leak. Component signs follow a fixed convention (the
//! entry of largest magnitude is non-negative) so fits are reproducible across
//! runs and thread counts.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::matrix::DenseMatrix;

pub const PCA_MAGIC: &[u8; 8] = b"FAIRPCA1";

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("need at least 2 samples to fit, got {0}")]
    TooFewSamples(usize),
    #[error("degenerate data: zero total variance")]
    DegenerateData,
    #[error("dimension mismatch: model expects {expected}, input has {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("variance target {0} out of (0, 1]")]
    BadVarianceTarget(f64),
    #[error("non-finite input value")]
    NonFinite,
    #[error("bad magic in PCA model file")]
    BadMagic,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frozen PCA basis: centering mean, orthonormal component rows, and the
/// variance ratio each retained component explains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k x dim, orthonormal rows, deterministic sign.
    pub components: DenseMatrix,
    /// Ratio per retained component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
    pub k: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PCA_MAGIC);
        binio::write_u32(&mut out, self.dim() as u32).unwrap();
        binio::write_u32(&mut out, self.k as u32).unwrap();
        for v in &self.mean {
            binio::write_f64(&mut out, *v).unwrap();
        }
        for v in self.components.as_slice() {
            binio::write_f64(&mut out, *v).unwrap();
        }
        for v in &self.explained_variance_ratio {
            binio::write_f64(&mut out, *v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LinalgError> {
        let mut r = bytes;
        let magic = binio::read_magic(&mut r)?;
        if &magic != PCA_MAGIC {
            return Err(LinalgError::BadMagic);
        }
        let dim = binio::read_u32(&mut r)? as usize;
        let k = binio::read_u32(&mut r)? as usize;
        let mut mean = Vec::with_capacity(dim);
        for _ in 0..dim {
            mean.push(binio::read_f64(&mut r)?);
        }
        let mut comps = Vec::with_capacity(k * dim);
        for _ in 0..k * dim {
            comps.push(binio::read_f64(&mut r)?);
        }
        let mut ratios = Vec::with_capacity(k);
        for _ in 0..k {
            ratios.push(binio::read_f64(&mut r)?);
        }
        Ok(PcaModel {
            mean,
            components: DenseMatrix::from_vec(k, dim, comps),
            explained_variance_ratio: ratios,
            k,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LinalgError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LinalgError> {
        let mut bytes = Vec::new();
        BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Fits a PCA basis on the given (train-split) matrix, retaining the smallest
/// k whose cumulative explained variance reaches `variance_target`.
pub fn fit_pca(x: &DenseMatrix, variance_target: f64) -> Result<PcaModel, LinalgError> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(LinalgError::BadVarianceTarget(variance_target));
    }
    let n = x.n_rows();
    let dim = x.n_cols();
    if n < 2 {
        return Err(LinalgError::TooFewSamples(n));
    }
    if x.find_non_finite().is_some() {
        return Err(LinalgError::NonFinite);
    }

    let mut mean = vec![0.0; dim];
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut centered = DMatrix::<f64>::zeros(n, dim);
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            centered[(i, j)] = v - mean[j];
        }
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let singular = svd.singular_values;

    // Sort components by decreasing singular value; stable on ties.
    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].partial_cmp(&singular[a]).unwrap().then(a.cmp(&b)));

    let total: f64 = singular.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(LinalgError::DegenerateData);
    }

    let ratios: Vec<f64> = order.iter().map(|&i| singular[i] * singular[i] / total).collect();
    let mut k = ratios.len();
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= variance_target - 1e-12 {
            k = i + 1;
            break;
        }
    }

    let mut components = DenseMatrix::zeros(k, dim);
    for (out_row, &src) in order.iter().take(k).enumerate() {
        let mut row: Vec<f64> = (0..dim).map(|j| v_t[(src, j)]).collect();
        // Sign convention: the entry of largest magnitude is non-negative;
        // ties resolved by the lowest index.
        let lead = (0..dim)
            .max_by(|&a, &b| {
                row[a].abs().partial_cmp(&row[b].abs()).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        if row[lead] < 0.0 {
            for v in &mut row {
                *v = -*v;
            }
        }
        components.row_mut(out_row).copy_from_slice(&row);
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios[..k].to_vec(),
        k,
    })
}

/// Convenience for plotting: fit exactly `k` components regardless of the
/// variance they explain.
pub fn fit_pca_k(x: &DenseMatrix, k: usize) -> Result<PcaModel, LinalgError> {
    let mut model = fit_pca(x, 1.0)?;
    let k = k.min(model.k);
    model.components = DenseMatrix::from_vec(
        k,
        model.dim(),
        model.components.as_slice()[..k * model.dim()].to_vec(),
    );
    model.explained_variance_ratio.truncate(k);
    model.k = k;
    Ok(model)
}

/// Projects rows onto the frozen basis: `(x - mean) @ components^T`.
pub fn pca_transform(model: &PcaModel, x: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if x.n_cols() != model.dim() {
        return Err(LinalgError::DimMismatch { expected: model.dim(), got: x.n_cols() });
    }
    let n = x.n_rows();
    let mut out = DenseMatrix::zeros(n, model.k);
    for i in 0..n {
        let row = x.row(i);
        for c in 0..model.k {
            let comp = model.components.row(c);
            let mut acc = 0.0;
            for j in 0..model.dim() {
                acc += (row[j] - model.mean[j]) * comp[j];
            }
            out.set(i, c, acc);
        }
    }
    Ok(out)
}

/// Maps reduced rows back to the original space: `z @ components + mean`.
pub fn pca_inverse_transform(
    model: &PcaModel,
    z: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    if z.n_cols() != model.k {
        return Err(LinalgError::DimMismatch { expected: model.k, got: z.n_cols() });
    }
    let n = z.n_rows();
    let dim = model.dim();
    let mut out = DenseMatrix::zeros(n, dim);
    for i in 0..n {
        let zi = z.row(i);
        let row = out.row_mut(i);
        row.copy_from_slice(&model.mean);
        for c in 0..model.k {
            let comp = model.components.row(c);
            for j in 0..dim {
                row[j] += zi[c] * comp[j];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        DenseMatrix::from_vec(n, d, data)
    }

    #[test]
    fn k_is_smallest_reaching_target() {
        // Construct data whose variance ratios are close to (0.6, 0.3, 0.08, 0.02)
        // by scaling independent coordinates.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let scales = [0.6f64.sqrt(), 0.3f64.sqrt(), 0.08f64.sqrt(), 0.02f64.sqrt()];
        let n = 4000;
        let mut m = DenseMatrix::zeros(n, 4);
        for i in 0..n {
            for (j, s) in scales.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                m.set(i, j, z * s);
            }
        }
        let model = fit_pca(&m, 0.95).unwrap();
        assert_eq!(model.k, 3, "ratios {:?}", model.explained_variance_ratio);
    }

    #[test]
    fn rank_one_data_keeps_single_component() {
        let mut m = DenseMatrix::zeros(50, 2);
        for i in 0..50 {
            let t = i as f64 / 10.0;
            m.set(i, 0, 3.0 * t);
            m.set(i, 1, 4.0 * t);
        }
        let model = fit_pca(&m, 0.95).unwrap();
        assert_eq!(model.k, 1);
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert!(matches!(fit_pca(&m, 0.95), Err(LinalgError::DegenerateData)));
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let m = random_matrix(200, 16, 3);
        let model = fit_pca(&m, 1.0).unwrap();
        assert_eq!(model.k, 16);
        let z = pca_transform(&model, &m).unwrap();
        let back = pca_inverse_transform(&model, &z).unwrap();
        let mut err = 0.0;
        for i in 0..m.n_rows() {
            for j in 0..m.n_cols() {
                err += (m.get(i, j) - back.get(i, j)).powi(2);
            }
        }
        assert!(err.sqrt() < 1e-8, "frobenius error {}", err.sqrt());
    }

    #[test]
    fn transform_of_mean_is_zero() {
        let m = random_matrix(60, 5, 9);
        let model = fit_pca(&m, 0.95).unwrap();
        let mean_row = DenseMatrix::from_vec(1, 5, model.mean.clone());
        let z = pca_transform(&model, &mean_row).unwrap();
        for c in 0..model.k {
            assert!(z.get(0, c).abs() < 1e-9);
        }
    }

    #[test]
    fn rotated_line_projects_to_signed_diagonal_distance() {
        // Four points on the 45-degree diagonal: the 1-D projection is the
        // signed distance along the diagonal from the centroid.
        let pts = [(-2.0, -2.0), (-1.0, -1.0), (1.0, 1.0), (2.0, 2.0)];
        let rows: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
        let m = DenseMatrix::from_rows(&rows);
        let model = fit_pca(&m, 0.95).unwrap();
        assert_eq!(model.k, 1);
        let z = pca_transform(&model, &m).unwrap();
        let expected = [-2.0 * 2f64.sqrt(), -2f64.sqrt(), 2f64.sqrt(), 2.0 * 2f64.sqrt()];
        for (i, e) in expected.iter().enumerate() {
            assert!((z.get(i, 0) - e).abs() < 1e-9, "{} vs {}", z.get(i, 0), e);
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let m = random_matrix(120, 10, 21);
        let model = fit_pca(&m, 1.0).unwrap();
        for a in 0..model.k {
            for b in 0..model.k {
                let dot: f64 = model
                    .components
                    .row(a)
                    .iter()
                    .zip(model.components.row(b))
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ratios_non_increasing_and_sum_to_one_at_full_rank() {
        let m = random_matrix(80, 7, 2);
        let model = fit_pca(&m, 1.0).unwrap();
        let r = &model.explained_variance_ratio;
        assert!(r.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        let sum: f64 = r.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sign_convention_leading_entry_non_negative() {
        let m = random_matrix(90, 6, 33);
        let model = fit_pca(&m, 1.0).unwrap();
        for c in 0..model.k {
            let row = model.components.row(c);
            let lead = row
                .iter()
                .cloned()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            assert!(lead >= 0.0);
        }
    }

    #[test]
    fn projected_train_covariance_is_diagonal() {
        let m = random_matrix(300, 8, 4);
        let model = fit_pca(&m, 1.0).unwrap();
        let z = pca_transform(&model, &m).unwrap();
        let n = z.n_rows() as f64;
        let k = z.n_cols();
        let means: Vec<f64> = (0..k)
            .map(|c| (0..z.n_rows()).map(|i| z.get(i, c)).sum::<f64>() / n)
            .collect();
        let var: Vec<f64> = (0..k)
            .map(|c| {
                (0..z.n_rows()).map(|i| (z.get(i, c) - means[c]).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .collect();
        for a in 0..k {
            for b in (a + 1)..k {
                let cov: f64 = (0..z.n_rows())
                    .map(|i| (z.get(i, a) - means[a]) * (z.get(i, b) - means[b]))
                    .sum::<f64>()
                    / (n - 1.0);
                let corr = cov / (var[a] * var[b]).sqrt();
                assert!(corr.abs() < 1e-6, "corr({a},{b}) = {corr}");
            }
        }
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let m = random_matrix(30, 4, 8);
        let model = fit_pca(&m, 0.9).unwrap();
        let other = random_matrix(5, 3, 8);
        assert!(matches!(
            pca_transform(&model, &other),
            Err(LinalgError::DimMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = random_matrix(40, 6, 12);
        let model = fit_pca(&m, 0.9).unwrap();
        let path = dir.path().join("pca.bin");
        model.save(&path).unwrap();
        let back = PcaModel::load(&path).unwrap();
        assert_eq!(back.mean, model.mean);
        assert_eq!(back.components, model.components);
        assert_eq!(back.explained_variance_ratio, model.explained_variance_ratio);
    }
}
