//! PCA by exact eigendecomposition of the p-by-p covariance matrix.

use crate::error::{Error, Result};
use crate::numstat::linalg::{mean_cov, sub, sym_eigen, Matrix};

/// A fitted linear projection: `y = W (x - mean)` with orthonormal rows of W.
#[derive(Clone, Debug)]
pub struct PcaModel {
    mean: Vec<f64>,
    components: Matrix,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// k-by-p projection matrix, one component per row.
    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Rebuild a model from stored arrays (used by model-file loading).
    pub fn from_parts(
        mean: Vec<f64>,
        components: Matrix,
        explained_variance: Vec<f64>,
    ) -> Result<PcaModel> {
        if components.cols() != mean.len() {
            return Err(Error::DimMismatch { expected: components.cols(), got: mean.len() });
        }
        if components.rows() != explained_variance.len() {
            return Err(Error::DimMismatch {
                expected: components.rows(),
                got: explained_variance.len(),
            });
        }
        if components.rows() > components.cols() {
            return Err(Error::InvalidParameter(format!(
                "projection has more components ({}) than input dimensions ({})",
                components.rows(),
                components.cols()
            )));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("projection mean"));
        }
        Ok(PcaModel { mean, components, explained_variance })
    }

    /// Project `x` into the component space.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(self.components.matvec(&sub(x, &self.mean)))
    }
}

/// Fit a k-dimensional PCA to the rows of `x`. Components are the top-k
/// eigenvectors of the sample covariance, sign-fixed so the first entry of
/// magnitude above 1e-12 is positive.
pub fn fit_pca(x: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if k < 1 || k > p || k > n.saturating_sub(1) {
        return Err(Error::InvalidParameter(format!(
            "PCA target dimension k = {k} must satisfy 1 <= k <= min(n-1, p) = {}",
            p.min(n.saturating_sub(1))
        )));
    }
    let (mean, cov) = mean_cov(x)?;
    let (values, vectors) = sym_eigen(&cov)?;
    let mut components = Matrix::zeros(k, p);
    for r in 0..k {
        for c in 0..p {
            components[(r, c)] = vectors[(r, c)];
        }
    }
    let explained_variance = values[..k].iter().map(|v| v.max(0.0)).collect();
    Ok(PcaModel { mean, components, explained_variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numstat::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Closed-form top eigenvector of a symmetric 2x2 matrix; independent
    /// oracle for the Jacobi-based fit.
    fn analytic_top_eigenvector_2x2(a: f64, b: f64, d: f64) -> (f64, Vec<f64>) {
        let tr = a + d;
        let det = a * d - b * b;
        let lam = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        let v = if b.abs() > 1e-300 {
            vec![lam - d, b]
        } else if a >= d {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        };
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        (lam, v.into_iter().map(|e| e / norm).collect())
    }

    #[test]
    fn rank_one_data_recovers_line_direction() {
        let dir = [0.6, -0.8];
        let rows: Vec<Vec<f64>> =
            (0..10).map(|i| vec![dir[0] * i as f64, dir[1] * i as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_pca(&x, 1).unwrap();
        let c = m.components().row(0);
        let cosine = (c[0] * dir[0] + c[1] * dir[1]).abs();
        assert!((cosine - 1.0).abs() <= 1e-12);
        assert_eq!(m.explained_variance().len(), 1);
        // Sign convention: first entry positive.
        assert!(c[0] > 0.0);
    }

    #[test]
    fn sampled_diagonal_covariance_matches_analytic_eigenvector() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let g0: f64 = rng.sample(rand_distr::StandardNormal);
                let g1: f64 = rng.sample(rand_distr::StandardNormal);
                vec![3.0 * g0, g1]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_pca(&x, 1).unwrap();
        let (_, cov) = mean_cov(&x).unwrap();
        let (lam, v) = analytic_top_eigenvector_2x2(cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        let c = m.components().row(0);
        let cosine = (c[0] * v[0] + c[1] * v[1]).abs().min(1.0);
        assert!(cosine.acos() <= 1e-6, "angle to analytic eigenvector too large");
        assert!((m.explained_variance()[0] - lam).abs() <= 1e-9 * lam);
        // Population covariance diag(9, 1): loose sanity on the estimate.
        assert!((m.explained_variance()[0] - 9.0).abs() <= 0.3);
        assert!(c[0].abs() > 0.99);
    }

    #[test]
    fn full_rank_projection_preserves_centered_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> =
            (0..50).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_pca(&x, 4).unwrap();
        for r in &rows {
            let y = m.project(r).unwrap();
            // Reconstruct: x - mean = W^T y for orthonormal W.
            let back = m.components().tr_matvec(&y);
            for j in 0..4 {
                assert!((back[j] - (r[j] - m.mean()[j])).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn components_orthonormal_with_small_eigen_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<Vec<f64>> =
            (0..200).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_pca(&x, 3).unwrap();
        let (_, cov) = mean_cov(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(m.components().row(i), m.components().row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() <= 1e-9);
            }
            let u = m.components().row(i);
            let lam = m.explained_variance()[i];
            let su = cov.matvec(u);
            let resid: f64 =
                su.iter().zip(u).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
            assert!(resid <= 1e-6 * lam.max(1e-12));
        }
    }

    #[test]
    fn projection_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let rows: Vec<Vec<f64>> =
            (0..80).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_pca(&x, 2).unwrap();
        for _ in 0..50 {
            let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y = m.project(&p).unwrap();
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nx: f64 =
                p.iter().zip(m.mean()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(ny <= nx + 1e-12);
        }
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0, -1.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        assert!(fit_pca(&x, 4).is_err(), "k > p");
        assert!(fit_pca(&x, 0).is_err(), "k = 0");
        let tiny = Matrix::from_rows(&rows[..2]).unwrap();
        assert!(fit_pca(&tiny, 2).is_err(), "k > n-1");
        assert!(fit_pca(&tiny, 1).is_ok());
    }

    #[test]
    fn project_rejects_wrong_dimension() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, -(i as f64)]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_pca(&x, 1).unwrap();
        assert!(m.project(&[1.0, 2.0, 3.0]).is_err());
    }
}
