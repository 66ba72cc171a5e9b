//! Location/scatter estimation for per-class Gaussian models.
//!
//! Five strategies share one entry point: identity scatter (`E1`), diagonal
//! per-class variances (`E2`), a pooled covariance tied across classes
//! (`TMD`), the per-class maximum-likelihood fit (`MD`), and the FastMCD
//! robust fit (`RMD`). A brute-force `exhaustive_mcd` is included as a
//! reference implementation for small instances; it exists to check the
//! randomized search and is exponential in n.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numstat::{
    cholesky, chi2_quantile, derive_seed, mahalanobis_sq, mean_cov, CholeskyFactor, Matrix,
};

/// Estimation strategy for class-conditional location and scatter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Unit scatter: plain squared Euclidean distance to the class mean.
    E1,
    /// Diagonal scatter from per-class coordinate variances.
    E2,
    /// Per-class means with one covariance pooled across all classes.
    Tmd,
    /// Per-class maximum-likelihood mean and covariance.
    Md,
    /// Per-class minimum covariance determinant (FastMCD).
    Rmd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::E1, Method::E2, Method::Tmd, Method::Md, Method::Rmd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::E1 => "e1",
            Method::E2 => "e2",
            Method::Tmd => "tmd",
            Method::Md => "md",
            Method::Rmd => "rmd",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "e1" => Ok(Method::E1),
            "e2" => Ok(Method::E2),
            "tmd" => Ok(Method::Tmd),
            "md" => Ok(Method::Md),
            "rmd" => Ok(Method::Rmd),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected one of e1, e2, tmd, md, rmd)"
            ))),
        }
    }
}

/// Knobs for the estimation step.
#[derive(Clone, Debug)]
pub struct EstimationConfig {
    pub method: Method,
    /// Fraction of points in the MCD support; `None` uses the maximal
    /// breakdown default h = floor((n + k + 1) / 2).
    pub support_fraction: Option<f64>,
    /// Number of random FastMCD starts.
    pub restarts: usize,
    pub seed: u64,
}

impl EstimationConfig {
    pub fn new(method: Method, seed: u64) -> EstimationConfig {
        EstimationConfig { method, support_fraction: None, restarts: 500, seed }
    }
}

impl Default for EstimationConfig {
    fn default() -> EstimationConfig {
        EstimationConfig::new(Method::Md, 0)
    }
}

/// Fitted location/scatter for one action class, with the scatter's
/// Cholesky factor cached for distance evaluation.
#[derive(Clone, Debug)]
pub struct ClassGaussian {
    pub class_id: usize,
    pub location: Vec<f64>,
    pub scatter: Matrix,
    pub factor: CholeskyFactor,
    pub n_samples: usize,
}

impl ClassGaussian {
    pub fn from_moments(
        class_id: usize,
        location: Vec<f64>,
        scatter: Matrix,
        n_samples: usize,
    ) -> Result<ClassGaussian> {
        let factor = cholesky(&scatter)?;
        Ok(ClassGaussian { class_id, location, scatter, factor, n_samples })
    }
}

/// Per-class fit plus any warnings raised along the way (ridged scatters,
/// small-class fallbacks).
#[derive(Clone, Debug)]
pub struct PerClassFit {
    pub classes: BTreeMap<usize, ClassGaussian>,
    pub warnings: Vec<String>,
}

fn group_by_class(pairs: &[(Vec<f64>, usize)]) -> Result<(usize, BTreeMap<usize, Vec<usize>>)> {
    if pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    let k = pairs[0].0.len();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (x, c)) in pairs.iter().enumerate() {
        if x.len() != k {
            return Err(Error::DimMismatch { expected: k, got: x.len() });
        }
        groups.entry(*c).or_default().push(i);
    }
    Ok((k, groups))
}

fn class_matrix(pairs: &[(Vec<f64>, usize)], idx: &[usize]) -> Matrix {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| pairs[i].0.clone()).collect();
    Matrix::from_rows(&rows).expect("class rows validated at entry")
}

/// Pooled within-class covariance: deviations are taken from each class's
/// own mean, summed over everything, divided by the total count.
fn pooled_cov(pairs: &[(Vec<f64>, usize)], groups: &BTreeMap<usize, Vec<usize>>, k: usize) -> Matrix {
    let mut pooled = Matrix::zeros(k, k);
    let mut total = 0usize;
    for idx in groups.values() {
        let x = class_matrix(pairs, idx);
        let (mu, _) = mean_cov(&x).expect("non-empty class");
        for &i in idx {
            let d: Vec<f64> = pairs[i].0.iter().zip(&mu).map(|(a, b)| a - b).collect();
            for r in 0..k {
                for c in r..k {
                    pooled[(r, c)] += d[r] * d[c];
                }
            }
        }
        total += idx.len();
    }
    let inv = 1.0 / total as f64;
    for r in 0..k {
        for c in r..k {
            let v = pooled[(r, c)] * inv;
            pooled[(r, c)] = v;
            pooled[(c, r)] = v;
        }
    }
    pooled
}

/// Fit a ClassGaussian per class according to `config.method`. Classes with
/// fewer than k+2 samples under MD/RMD fall back to the pooled (tied)
/// scatter with a warning instead of aborting the caller.
pub fn fit_per_class(
    pairs: &[(Vec<f64>, usize)],
    config: &EstimationConfig,
) -> Result<PerClassFit> {
    let (k, groups) = group_by_class(pairs)?;
    let mut warnings = Vec::new();

    let needs_pooled = matches!(config.method, Method::Tmd)
        || (matches!(config.method, Method::Md | Method::Rmd)
            && groups.values().any(|idx| idx.len() < k + 2));
    let pooled = if needs_pooled { Some(pooled_cov(pairs, &groups, k)) } else { None };

    let mut classes = BTreeMap::new();
    for (&class_id, idx) in &groups {
        let x = class_matrix(pairs, idx);
        let n_c = idx.len();
        let (location, scatter) = match config.method {
            Method::E1 => {
                let (mu, _) = mean_cov(&x)?;
                (mu, Matrix::identity(k))
            }
            Method::E2 => {
                let (mu, cov) = mean_cov(&x)?;
                let diag: Vec<f64> = (0..k).map(|j| cov[(j, j)]).collect();
                (mu, Matrix::from_diag(&diag)?)
            }
            Method::Tmd => {
                let (mu, _) = mean_cov(&x)?;
                (mu, pooled.clone().expect("pooled computed for TMD"))
            }
            Method::Md | Method::Rmd => {
                if n_c < k + 2 {
                    warnings.push(format!(
                        "class {class_id}: {n_c} samples < k+2 = {}, using tied covariance",
                        k + 2
                    ));
                    let (mu, _) = mean_cov(&x)?;
                    (mu, pooled.clone().expect("pooled computed for fallback"))
                } else if config.method == Method::Md {
                    mean_cov(&x)?
                } else {
                    let mut sub_cfg = config.clone();
                    sub_cfg.seed = derive_seed(config.seed, class_id as u64);
                    let mcd = fit_mcd(&x, &sub_cfg)?;
                    (mcd.location, mcd.scatter)
                }
            }
        };
        let g = ClassGaussian::from_moments(class_id, location, scatter, n_c)?;
        if let Some(delta) = g.factor.ridge() {
            warnings.push(format!("class {class_id}: scatter ridged with delta {delta:e}"));
        }
        classes.insert(class_id, g);
    }
    Ok(PerClassFit { classes, warnings })
}

/// Outcome of a minimum-covariance-determinant fit.
#[derive(Clone, Debug)]
pub struct McdResult {
    pub location: Vec<f64>,
    /// Raw support covariance scaled by the consistency factor.
    pub scatter: Matrix,
    pub raw_scatter: Matrix,
    /// Support indices, ascending.
    pub support: Vec<usize>,
    pub h: usize,
    /// log det of the raw support covariance at the optimum.
    pub log_det: f64,
    pub restarts_used: usize,
    pub consistency: f64,
}

fn resolve_h(n: usize, k: usize, config: &EstimationConfig) -> Result<usize> {
    let h = match config.support_fraction {
        Some(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "support fraction must lie in (0, 1], got {f}"
                )));
            }
            (f * n as f64).floor() as usize
        }
        // Canonical default support size, written in its textbook form.
        #[allow(clippy::manual_div_ceil)]
        None => (n + k + 1) / 2,
    };
    if h < k + 1 {
        return Err(Error::SubsetTooSmall { h, min: k + 1 });
    }
    if h > n {
        return Err(Error::InvalidParameter(format!("support size h = {h} exceeds n = {n}")));
    }
    Ok(h)
}

fn subset_moments(x: &Matrix, idx: &[usize]) -> Result<(Vec<f64>, Matrix, CholeskyFactor)> {
    let rows = x.select_rows(idx);
    let (mu, cov) = mean_cov(&rows)?;
    let factor = cholesky(&cov)?;
    Ok((mu, cov, factor))
}

fn all_distances(x: &Matrix, mu: &[f64], factor: &CholeskyFactor) -> Result<Vec<f64>> {
    (0..x.rows()).map(|i| mahalanobis_sq(x.row(i), mu, factor)).collect()
}

/// Indices of the h smallest distances; ties broken by index, result sorted
/// ascending so supports compare as sets.
fn smallest_h(dists: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    let mut keep = order[..h].to_vec();
    keep.sort_unstable();
    keep
}

/// One concentration step: refit moments on `subset`, then keep the h points
/// closest in the refit metric. The covariance determinant never increases.
pub fn c_step(x: &Matrix, subset: &[usize]) -> Result<Vec<usize>> {
    let (mu, _, factor) = subset_moments(x, subset)?;
    let d = all_distances(x, &mu, &factor)?;
    Ok(smallest_h(&d, subset.len()))
}

fn converge_c_steps(
    x: &Matrix,
    mut support: Vec<usize>,
    mut log_det: f64,
    max_steps: usize,
) -> Result<(Vec<usize>, f64)> {
    for _ in 0..max_steps {
        let next = c_step(x, &support)?;
        if next == support {
            break;
        }
        let (_, _, factor) = subset_moments(x, &next)?;
        let next_det = factor.log_det();
        debug_assert!(
            next_det <= log_det + 1e-9,
            "C-step determinant increased: {log_det} -> {next_det}"
        );
        support = next;
        log_det = next_det;
    }
    Ok((support, log_det))
}

fn better(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
}

/// FastMCD: random (k+1)-point starts expanded to h-subsets, two
/// concentration steps per start, full convergence on the ten best, and a
/// chi-square median consistency rescaling of the winning covariance.
pub fn fit_mcd(x: &Matrix, config: &EstimationConfig) -> Result<McdResult> {
    let (n, k) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let h = resolve_h(n, k, config)?;

    let (support, restarts_used) = if h == n {
        ((0..n).collect::<Vec<usize>>(), 0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let restarts = config.restarts.max(1);
        let mut candidates: Vec<(f64, Vec<usize>)> = Vec::with_capacity(restarts);
        for _ in 0..restarts {
            let init: Vec<usize> = rand::seq::index::sample(&mut rng, n, k + 1).into_vec();
            let (mu, _, factor) = subset_moments(x, &init)?;
            let d = all_distances(x, &mu, &factor)?;
            let mut support = smallest_h(&d, h);
            let mut log_det = f64::INFINITY;
            for _ in 0..2 {
                let next = c_step(x, &support)?;
                let (_, _, factor) = subset_moments(x, &next)?;
                log_det = factor.log_det();
                if next == support {
                    break;
                }
                support = next;
            }
            candidates.push((log_det, support));
        }
        candidates.sort_by(better);
        candidates.truncate(10);
        candidates.dedup_by(|a, b| a.1 == b.1);
        let mut best: Option<(f64, Vec<usize>)> = None;
        for (log_det, support) in candidates {
            let converged = converge_c_steps(x, support, log_det, 200)?;
            let entry = (converged.1, converged.0);
            best = Some(match best {
                None => entry,
                Some(b) => {
                    if better(&entry, &b).is_lt() {
                        entry
                    } else {
                        b
                    }
                }
            });
        }
        (best.expect("at least one restart").1, restarts)
    };

    let (location, raw_scatter, factor) = subset_moments(x, &support)?;
    let mut d = all_distances(x, &location, &factor)?;
    d.sort_by(f64::total_cmp);
    let median = if n % 2 == 0 {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    } else {
        d[n / 2]
    };
    let consistency = median / chi2_quantile(k as f64, 0.5)?;
    let scatter = raw_scatter.scaled(consistency);
    Ok(McdResult {
        location,
        scatter,
        log_det: factor.log_det(),
        raw_scatter,
        support,
        h,
        restarts_used,
        consistency,
    })
}

fn binomial(n: usize, h: usize) -> u128 {
    let h = h.min(n - h);
    let mut acc: u128 = 1;
    for i in 0..h {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Brute-force MCD over every h-subset. Reference implementation for tests:
/// uses its own two-pass moments and LU determinant so it shares no code
/// path with the randomized search it checks. Ties go to the
/// lexicographically smallest index set.
pub fn exhaustive_mcd(x: &Matrix, h: usize) -> Result<McdResult> {
    let (n, k) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if h < k + 1 {
        return Err(Error::SubsetTooSmall { h, min: k + 1 });
    }
    if h > n {
        return Err(Error::InvalidParameter(format!("support size h = {h} exceeds n = {n}")));
    }
    let budget: u128 = 1_000_000;
    let combinations = binomial(n, h);
    if combinations > budget {
        return Err(Error::BudgetExceeded { combinations, budget });
    }

    fn two_pass(x: &Matrix, idx: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = x.cols();
        let mut mu = vec![0.0; k];
        for &i in idx {
            for j in 0..k {
                mu[j] += x.row(i)[j];
            }
        }
        for m in &mut mu {
            *m /= idx.len() as f64;
        }
        let mut cov = vec![vec![0.0; k]; k];
        for &i in idx {
            let d: Vec<f64> = x.row(i).iter().zip(&mu).map(|(a, b)| a - b).collect();
            for r in 0..k {
                for c in 0..k {
                    cov[r][c] += d[r] * d[c];
                }
            }
        }
        for row in &mut cov {
            for v in row {
                *v /= idx.len() as f64;
            }
        }
        (mu, cov)
    }

    fn det_lu(mut m: Vec<Vec<f64>>) -> f64 {
        let n = m.len();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                .unwrap();
            if m[pivot][col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                m.swap(pivot, col);
                det = -det;
            }
            det *= m[col][col];
            for r in (col + 1)..n {
                let f = m[r][col] / m[col][col];
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        det
    }

    fn next_combination(combo: &mut [usize], n: usize) -> bool {
        let h = combo.len();
        let mut i = h;
        while i > 0 {
            i -= 1;
            if combo[i] != i + n - h {
                combo[i] += 1;
                for j in (i + 1)..h {
                    combo[j] = combo[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }

    let mut combo: Vec<usize> = (0..h).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let (_, cov) = two_pass(x, &combo);
        let det = det_lu(cov);
        // Strict improvement only: lexicographic iteration order means the
        // first minimizer seen is the lexicographically smallest.
        if best.as_ref().is_none_or(|(b, _)| det < *b) {
            best = Some((det, combo.clone()));
        }
        if !next_combination(&mut combo, n) {
            break;
        }
    }

    let (det, support) = best.expect("at least one combination");
    let (location, raw_rows) = two_pass(x, &support);
    let raw_scatter = Matrix::from_rows(&raw_rows)?;
    let factor = cholesky(&raw_scatter)?;
    let mut d = all_distances(x, &location, &factor)?;
    d.sort_by(f64::total_cmp);
    let median = if n % 2 == 0 { 0.5 * (d[n / 2 - 1] + d[n / 2]) } else { d[n / 2] };
    let consistency = median / chi2_quantile(k as f64, 0.5)?;
    let scatter = raw_scatter.scaled(consistency);
    Ok(McdResult {
        location,
        scatter,
        raw_scatter,
        support,
        h,
        log_det: if det > 0.0 { det.ln() } else { f64::NEG_INFINITY },
        restarts_used: 0,
        consistency,
    })
}
