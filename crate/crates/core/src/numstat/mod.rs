//! Foundational numerics: means and covariances, Cholesky factorization,
//! Mahalanobis quadratic forms, chi-square distribution functions, PCA, and
//! seeded sampling utilities.

mod chi2;
mod linalg;
mod pca;
mod rng;

pub use chi2::{chi2_cdf, chi2_quantile, ln_gamma, normal_quantile, regularized_lower_gamma};
pub use linalg::{cholesky, mahalanobis_sq, mean_cov, sym_eigen, CholeskyFactor, Matrix};
pub use pca::{fit_pca, PcaModel};
pub use rng::{derive_seed, ks_statistic, sample_mvn};


use crate::error::{Error, Result};

/// Cube-root transform of a squared distance, used for the near-normality
/// diagnostic summaries of detection distances.
pub fn cube_root_transform(d2: f64) -> Result<f64> {
    if d2.is_nan() || d2 < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "cube-root transform expects a non-negative squared distance, got {d2}"
        )));
    }
    Ok(d2.cbrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_root_transform_basics() {
        assert_eq!(cube_root_transform(0.0).unwrap(), 0.0);
        assert_eq!(cube_root_transform(8.0).unwrap(), 2.0);
        assert_eq!(cube_root_transform(27.0).unwrap(), 3.0);
        assert!(cube_root_transform(-1.0).is_err());
        assert!(cube_root_transform(f64::NAN).is_err());
    }

    /// With true Gaussian parameters the squared Mahalanobis distances are
    /// chi-square with p degrees of freedom; check the whole pipeline with a
    /// KS test at n = 1e5 for each p.
    #[test]
    fn mahalanobis_of_gaussian_data_is_chi_square() {
        for (pi, p) in [2usize, 5, 10].into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(1700 + pi as u64);
            // A non-trivial SPD covariance: A A^T + I.
            let mut a = Matrix::zeros(p, p);
            for i in 0..p {
                for j in 0..p {
                    a[(i, j)] = ((i * p + j) as f64 * 0.37).sin();
                }
            }
            let mut sigma = Matrix::zeros(p, p);
            for i in 0..p {
                for j in 0..p {
                    let mut s = 0.0;
                    for k in 0..p {
                        s += a[(i, k)] * a[(j, k)];
                    }
                    sigma[(i, j)] = s + if i == j { 1.0 } else { 0.0 };
                }
            }
            let f = cholesky(&sigma).unwrap();
            let mu: Vec<f64> = (0..p).map(|i| i as f64 - 1.0).collect();
            let d2: Vec<f64> = (0..100_000)
                .map(|_| {
                    let x = sample_mvn(&mu, &f, &mut rng).unwrap();
                    mahalanobis_sq(&x, &mu, &f).unwrap()
                })
                .collect();
            let stat =
                ks_statistic(&d2, |x| chi2_cdf(p as f64, x.max(0.0)).unwrap()).unwrap();
            assert!(stat <= 0.01, "KS statistic {stat} too large at p = {p}");
        }
    }
}
