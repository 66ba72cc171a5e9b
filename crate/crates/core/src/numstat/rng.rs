//! Seed derivation and Gaussian sampling helpers shared across the crate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numstat::linalg::CholeskyFactor;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically derive an independent stream seed from a master seed
/// and a stream tag. Stable across platforms.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// One draw from N(mu, Sigma) given the Cholesky factor L of Sigma:
/// `mu + L z` with z standard normal.
pub fn sample_mvn<R: Rng>(mu: &[f64], factor: &CholeskyFactor, rng: &mut R) -> Result<Vec<f64>> {
    let p = factor.dim();
    if mu.len() != p {
        return Err(Error::DimMismatch { expected: p, got: mu.len() });
    }
    let z: Vec<f64> = (0..p).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let l = factor.lower();
    let mut out = mu.to_vec();
    for i in 0..p {
        let row = l.row(i);
        out[i] += (0..=i).map(|j| row[j] * z[j]).sum::<f64>();
    }
    Ok(out)
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against a reference
/// CDF: sup over the sample of |F_empirical - F|.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut stat = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        stat = stat.max(hi.abs()).max(lo.abs());
    }
    Ok(stat)
}
