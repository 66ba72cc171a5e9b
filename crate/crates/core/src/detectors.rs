//! Distance-based detectors over per-class Gaussian models.
//!
//! A `DetectorModel` owns an optional PCA projection, one `ClassGaussian`
//! per action class, and a chi-square threshold at significance `alpha`.
//! Scoring takes the minimum squared Mahalanobis distance over classes; a
//! state is declared an outlier when that distance strictly exceeds
//! chi2_quantile(k, 1 - alpha) with k the projected feature dimension.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_per_class, ClassGaussian, EstimationConfig, Method};
use crate::numstat::{chi2_quantile, fit_pca, mahalanobis_sq, Matrix, PcaModel};

/// Detection verdict for one state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Inlier,
    Outlier,
}

impl Label {
    /// Numeric encoding: -1 inlier, +1 outlier.
    pub fn value(&self) -> i8 {
        match self {
            Label::Inlier => -1,
            Label::Outlier => 1,
        }
    }
}

/// A label together with the distance and arg-min class that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Detection {
    pub label: Label,
    pub distance: f64,
    pub class_id: usize,
}

/// Aggregate evaluation outcome on a labeled state set.
#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub labels: Vec<Detection>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub accuracy: f64,
    pub f1: f64,
}

/// Provenance recorded at fit time.
#[derive(Clone, Debug, Default)]
pub struct FitMetadata {
    pub seed: u64,
    pub sample_counts: BTreeMap<usize, usize>,
    pub ridge_warnings: Vec<String>,
}

/// A fitted detector: projection, per-class Gaussians, and threshold.
#[derive(Clone, Debug)]
pub struct DetectorModel {
    method: Method,
    alpha: f64,
    k: usize,
    pca: Option<PcaModel>,
    classes: BTreeMap<usize, ClassGaussian>,
    metadata: FitMetadata,
    threshold: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

impl DetectorModel {
    /// Assemble a detector from ready-made class Gaussians (no projection).
    /// Useful for calibration studies with known true parameters.
    pub fn from_gaussians(
        classes: BTreeMap<usize, ClassGaussian>,
        alpha: f64,
    ) -> Result<DetectorModel> {
        check_alpha(alpha)?;
        let k = match classes.values().next() {
            None => return Err(Error::EmptySample),
            Some(g) => g.location.len(),
        };
        let metadata = FitMetadata {
            sample_counts: classes.iter().map(|(&c, g)| (c, g.n_samples)).collect(),
            ..FitMetadata::default()
        };
        let threshold = chi2_quantile(k as f64, 1.0 - alpha)?;
        Ok(DetectorModel { method: Method::Md, alpha, k, pca: None, classes, metadata, threshold })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Degrees of freedom: the projected feature dimension.
    pub fn dof(&self) -> usize {
        self.k
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }

    pub fn classes(&self) -> &BTreeMap<usize, ClassGaussian> {
        &self.classes
    }

    pub fn metadata(&self) -> &FitMetadata {
        &self.metadata
    }

    /// The chi-square decision threshold chi2_quantile(k, 1 - alpha).
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Same model with a different significance level.
    pub fn with_alpha(&self, alpha: f64) -> Result<DetectorModel> {
        check_alpha(alpha)?;
        let mut m = self.clone();
        m.alpha = alpha;
        m.threshold = chi2_quantile(self.k as f64, 1.0 - alpha)?;
        Ok(m)
    }

    /// Minimum squared Mahalanobis distance over classes and the minimizing
    /// class (ties go to the smallest class id).
    pub fn detection_distance(&self, raw_feature: &[f64]) -> Result<(f64, usize)> {
        let projected;
        let feature: &[f64] = match &self.pca {
            Some(p) => {
                projected = p.project(raw_feature)?;
                &projected
            }
            None => {
                if raw_feature.len() != self.k {
                    return Err(Error::DimMismatch { expected: self.k, got: raw_feature.len() });
                }
                raw_feature
            }
        };
        let mut best: Option<(f64, usize)> = None;
        for (&class_id, g) in &self.classes {
            let d = mahalanobis_sq(feature, &g.location, &g.factor)?;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, class_id));
            }
        }
        best.ok_or(Error::EmptySample)
    }

    /// Label implied by a distance: outlier iff strictly above the threshold.
    pub fn label_for_distance(&self, distance: f64) -> Label {
        if distance > self.threshold {
            Label::Outlier
        } else {
            Label::Inlier
        }
    }

    pub fn classify(&self, raw_feature: &[f64]) -> Result<Detection> {
        let (distance, class_id) = self.detection_distance(raw_feature)?;
        Ok(Detection { label: self.label_for_distance(distance), distance, class_id })
    }

    /// Score a labeled set (`true` marks a ground-truth outlier) and fill a
    /// confusion-matrix report. F1 uses the 0/0 -> 0 convention.
    pub fn evaluate(&self, states: &[(Vec<f64>, bool)]) -> Result<DetectionReport> {
        if states.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut labels = Vec::with_capacity(states.len());
        let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for (x, is_outlier) in states {
            let det = self.classify(x)?;
            match (det.label, *is_outlier) {
                (Label::Outlier, true) => tp += 1,
                (Label::Outlier, false) => fp += 1,
                (Label::Inlier, false) => tn += 1,
                (Label::Inlier, true) => fn_ += 1,
            }
            labels.push(det);
        }
        Ok(DetectionReport {
            labels,
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
            accuracy: (tp + tn) as f64 / states.len() as f64,
            f1: f1_score(tp, fp, fn_),
        })
    }
}

pub(crate) fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Fit a detector on (raw feature, class) pairs. With `k = Some(dim)` a PCA
/// is fit on the pooled features first (even when dim equals the input
/// dimension, where it amounts to a rotation); with `k = None` features are
/// used as-is.
pub fn fit_detector(
    pairs: &[(Vec<f64>, usize)],
    method: Method,
    k: Option<usize>,
    alpha: f64,
    config: &EstimationConfig,
) -> Result<DetectorModel> {
    let pca = match k {
        None => None,
        Some(dim) => {
            let rows: Vec<Vec<f64>> = pairs.iter().map(|(x, _)| x.clone()).collect();
            let x = Matrix::from_rows(&rows)?;
            Some(fit_pca(&x, dim)?)
        }
    };
    fit_detector_with_pca(pairs, method, pca, alpha, config)
}

/// Fit a detector under an externally managed projection (the online loop
/// refreshes its PCA on a slower schedule than the class Gaussians).
pub fn fit_detector_with_pca(
    pairs: &[(Vec<f64>, usize)],
    method: Method,
    pca: Option<PcaModel>,
    alpha: f64,
    config: &EstimationConfig,
) -> Result<DetectorModel> {
    check_alpha(alpha)?;
    if pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    let projected: Vec<(Vec<f64>, usize)> = match &pca {
        None => pairs.to_vec(),
        Some(p) => pairs
            .iter()
            .map(|(x, c)| Ok((p.project(x)?, *c)))
            .collect::<Result<_>>()?,
    };
    let mut est_cfg = config.clone();
    est_cfg.method = method;
    let fit = fit_per_class(&projected, &est_cfg)?;
    let k = match &pca {
        Some(p) => p.output_dim(),
        None => projected[0].0.len(),
    };
    let metadata = FitMetadata {
        seed: config.seed,
        sample_counts: fit.classes.iter().map(|(&c, g)| (c, g.n_samples)).collect(),
        ridge_warnings: fit.warnings,
    };
    let threshold = chi2_quantile(k as f64, 1.0 - alpha)?;
    Ok(DetectorModel { method, alpha, k, pca, classes: fit.classes, metadata, threshold })
}

// --- model file -----------------------------------------------------------

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PcaFile {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClassFile {
    id: usize,
    n: usize,
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    seed: u64,
    ridge_warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    method: String,
    alpha: f64,
    k: usize,
    pca: Option<PcaFile>,
    classes: Vec<ClassFile>,
    metadata: MetaFile,
}

impl DetectorModel {
    /// Write the model as a self-describing JSON document. Floats are
    /// emitted in shortest-round-trip form, so `load` reproduces them
    /// bit-for-bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            method: self.method.to_string(),
            alpha: self.alpha,
            k: self.k,
            pca: self.pca.as_ref().map(|p| PcaFile {
                mean: p.mean().to_vec(),
                components: p.components().to_rows(),
                explained_variance: p.explained_variance().to_vec(),
            }),
            classes: self
                .classes
                .values()
                .map(|g| ClassFile {
                    id: g.class_id,
                    n: g.n_samples,
                    mu: g.location.clone(),
                    sigma: g.scatter.to_rows(),
                })
                .collect(),
            metadata: MetaFile {
                seed: self.metadata.seed,
                ridge_warnings: self.metadata.ridge_warnings.clone(),
            },
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Load a model file, refactorizing each stored scatter (the Cholesky
    /// factor is derived state and is deliberately not serialized).
    pub fn load(path: &Path) -> Result<DetectorModel> {
        let text = std::fs::read_to_string(path)?;
        let parse_err = |detail: String| Error::Parse { path: path.display().to_string(), detail };
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormatVersion {
                found: file.format_version,
                expected: FORMAT_VERSION,
            });
        }
        check_alpha(file.alpha)?;
        let method: Method = file.method.parse()?;
        let pca = match file.pca {
            None => None,
            Some(p) => {
                let components = Matrix::from_rows(&p.components)?;
                Some(PcaModel::from_parts(p.mean, components, p.explained_variance)?)
            }
        };
        if file.classes.is_empty() {
            return Err(parse_err("no classes in model file".into()));
        }
        let mut classes = BTreeMap::new();
        let mut sample_counts = BTreeMap::new();
        for c in file.classes {
            if c.mu.len() != file.k {
                return Err(parse_err(format!(
                    "class {}: mu has length {}, expected k = {}",
                    c.id,
                    c.mu.len(),
                    file.k
                )));
            }
            let scatter = Matrix::from_rows(&c.sigma)?;
            if scatter.rows() != file.k || scatter.cols() != file.k {
                return Err(parse_err(format!(
                    "class {}: sigma is {}x{}, expected {}x{}",
                    c.id,
                    scatter.rows(),
                    scatter.cols(),
                    file.k,
                    file.k
                )));
            }
            if classes
                .insert(c.id, ClassGaussian::from_moments(c.id, c.mu, scatter, c.n)?)
                .is_some()
            {
                return Err(parse_err(format!("duplicate class id {}", c.id)));
            }
            sample_counts.insert(c.id, c.n);
        }
        if let Some(p) = &pca {
            if p.output_dim() != file.k {
                return Err(parse_err(format!(
                    "projection outputs {} dims, expected k = {}",
                    p.output_dim(),
                    file.k
                )));
            }
        }
        let metadata = FitMetadata {
            seed: file.metadata.seed,
            sample_counts,
            ridge_warnings: file.metadata.ridge_warnings,
        };
        let threshold = chi2_quantile(file.k as f64, 1.0 - file.alpha)?;
        Ok(DetectorModel {
            method,
            alpha: file.alpha,
            k: file.k,
            pca,
            classes,
            metadata,
            threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numstat::{cholesky, sample_mvn};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_pairs(
        rng: &mut ChaCha8Rng,
        mu: &[f64],
        sigma: &Matrix,
        n: usize,
        class: usize,
    ) -> Vec<(Vec<f64>, usize)> {
        let f = cholesky(sigma).unwrap();
        (0..n).map(|_| (sample_mvn(mu, &f, rng).unwrap(), class)).collect()
    }

    fn two_class_model(alpha: f64) -> DetectorModel {
        // Identity scatters, means at +e1 and -e1.
        let mut classes = BTreeMap::new();
        for (id, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            classes.insert(
                id,
                ClassGaussian::from_moments(id, vec![sign, 0.0], Matrix::identity(2), 10)
                    .unwrap(),
            );
        }
        DetectorModel::from_gaussians(classes, alpha).unwrap()
    }

    #[test]
    fn fit_single_class_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pairs = gaussian_pairs(&mut rng, &[0.0; 3], &Matrix::identity(3), 5000, 0);
        let m = fit_detector(&pairs, Method::Md, None, 0.05, &EstimationConfig::default())
            .unwrap();
        let g = &m.classes()[&0];
        assert!(g.location.iter().all(|v| v.abs() <= 0.1));
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((g.scatter[(r, c)] - want).abs() <= 0.1);
            }
        }
        assert_eq!(m.dof(), 3);
    }

    #[test]
    fn e1_scoring_is_squared_euclidean_to_nearest_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sigma = Matrix::from_diag(&[3.0, 0.2]).unwrap();
        let mut pairs = gaussian_pairs(&mut rng, &[0.0, 0.0], &sigma, 200, 0);
        pairs.extend(gaussian_pairs(&mut rng, &[5.0, 1.0], &sigma, 200, 1));
        let m = fit_detector(&pairs, Method::E1, None, 0.05, &EstimationConfig::default())
            .unwrap();
        for _ in 0..50 {
            let x = vec![rng.gen_range(-3.0..8.0), rng.gen_range(-3.0..3.0)];
            let (d, _) = m.detection_distance(&x).unwrap();
            let want = m
                .classes()
                .values()
                .map(|g| {
                    x.iter().zip(&g.location).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((d - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn rmd_location_beats_md_under_contamination() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let truth = [1.0, -1.0, 0.5];
        let mut pairs = gaussian_pairs(&mut rng, &truth, &Matrix::identity(3), 900, 0);
        for _ in 0..100 {
            pairs.push((vec![30.0, 30.0, 30.0], 0));
        }
        let cfg = EstimationConfig::new(Method::Md, 3);
        let md = fit_detector(&pairs, Method::Md, None, 0.05, &cfg).unwrap();
        let rmd = fit_detector(&pairs, Method::Rmd, None, 0.05, &cfg).unwrap();
        let err = |m: &DetectorModel| {
            m.classes()[&0]
                .location
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        assert!(err(&rmd) < err(&md), "rmd {} vs md {}", err(&rmd), err(&md));
    }

    #[test]
    fn distance_at_class_mean_is_zero() {
        let m = two_class_model(0.05);
        let (d, c) = m.detection_distance(&[1.0, 0.0]).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(c, 0);
        let (d, c) = m.detection_distance(&[-1.0, 0.0]).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(c, 1);
    }

    #[test]
    fn tie_at_origin_goes_to_smallest_class_id() {
        let m = two_class_model(0.05);
        let (d, c) = m.detection_distance(&[0.0, 0.0]).unwrap();
        assert!((d - 1.0).abs() <= 1e-15);
        assert_eq!(c, 0);
    }

    #[test]
    fn distance_matches_dense_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut pairs = Vec::new();
        for class in 0..3usize {
            let mu: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut sigma = Matrix::identity(4);
            for i in 0..4 {
                sigma[(i, i)] = rng.gen_range(0.5..2.0);
            }
            pairs.extend(gaussian_pairs(&mut rng, &mu, &sigma, 300, class));
        }
        let m = fit_detector(&pairs, Method::Md, None, 0.05, &EstimationConfig::default())
            .unwrap();
        // Oracle: explicit inverse via Gauss-Jordan per class, brute min.
        let invert = |a: &Matrix| {
            let n = a.rows();
            let mut aug = vec![vec![0.0; 2 * n]; n];
            for i in 0..n {
                for j in 0..n {
                    aug[i][j] = a[(i, j)];
                }
                aug[i][n + i] = 1.0;
            }
            for col in 0..n {
                let piv = (col..n)
                    .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
                    .unwrap();
                aug.swap(col, piv);
                let p = aug[col][col];
                for j in 0..2 * n {
                    aug[col][j] /= p;
                }
                for i in 0..n {
                    if i != col {
                        let f = aug[i][col];
                        for j in 0..2 * n {
                            aug[i][j] -= f * aug[col][j];
                        }
                    }
                }
            }
            aug.into_iter().map(|r| r[n..].to_vec()).collect::<Vec<_>>()
        };
        for _ in 0..30 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let (got, _) = m.detection_distance(&x).unwrap();
            let mut want = f64::INFINITY;
            for g in m.classes().values() {
                let inv = invert(&g.scatter);
                let d: Vec<f64> = x.iter().zip(&g.location).map(|(a, b)| a - b).collect();
                let mut q = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        q += d[i] * inv[i][j] * d[j];
                    }
                }
                want = want.min(q);
            }
            assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn classify_thresholds_strictly() {
        let m = two_class_model(0.05);
        // M = 0 is always an inlier.
        assert_eq!(m.classify(&[1.0, 0.0]).unwrap().label, Label::Inlier);
        // k = 2, alpha = 0.05: threshold is -2 ln 0.05 = 5.99146...
        assert!((m.threshold() - 5.991464547107982).abs() <= 1e-9);
        // Distance 6.0 just above the threshold: outlier.
        assert_eq!(m.label_for_distance(6.0), Label::Outlier);
        // Boundary equality stays an inlier.
        assert_eq!(m.label_for_distance(m.threshold()), Label::Inlier);
        assert_eq!(m.label_for_distance(m.threshold()).value(), -1);
    }

    #[test]
    fn classify_is_a_function_of_the_distance() {
        let m = two_class_model(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = vec![rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
            let det = m.classify(&x).unwrap();
            let (d, c) = m.detection_distance(&x).unwrap();
            assert_eq!(det.label, m.label_for_distance(d));
            assert_eq!(det.distance, d);
            assert_eq!(det.class_id, c);
        }
    }

    #[test]
    fn evaluate_calibrates_on_clean_data_and_nails_far_outliers() {
        let mut classes = BTreeMap::new();
        classes.insert(
            0,
            ClassGaussian::from_moments(0, vec![0.0, 0.0], Matrix::identity(2), 100).unwrap(),
        );
        let m = DetectorModel::from_gaussians(classes, 0.05).unwrap();
        let f = cholesky(&Matrix::identity(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clean: Vec<(Vec<f64>, bool)> = (0..100_000)
            .map(|_| (sample_mvn(&[0.0, 0.0], &f, &mut rng).unwrap(), false))
            .collect();
        let rep = m.evaluate(&clean).unwrap();
        assert!(rep.accuracy >= 0.94 && rep.accuracy <= 0.96, "accuracy {}", rep.accuracy);

        let far: Vec<(Vec<f64>, bool)> =
            (0..1000).map(|i| (vec![1e6 + i as f64, 0.0], true)).collect();
        let rep = m.evaluate(&far).unwrap();
        assert_eq!(rep.true_positives, 1000);
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.f1, 1.0);
    }

    #[test]
    fn evaluate_rejects_empty_input() {
        let m = two_class_model(0.05);
        assert!(matches!(m.evaluate(&[]), Err(Error::EmptySample)));
    }

    #[test]
    fn f1_zero_over_zero_is_zero() {
        assert_eq!(f1_score(0, 0, 0), 0.0);
        assert_eq!(f1_score(3, 1, 2), 6.0 / 9.0);
    }

    #[test]
    fn flagged_fraction_tracks_alpha_with_true_parameters() {
        let sigma = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let f = cholesky(&sigma).unwrap();
        let mut classes = BTreeMap::new();
        classes.insert(
            0,
            ClassGaussian::from_moments(0, vec![1.0, -1.0], sigma.clone(), 100).unwrap(),
        );
        let base = DetectorModel::from_gaussians(classes, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let states: Vec<Vec<f64>> =
            (0..100_000).map(|_| sample_mvn(&[1.0, -1.0], &f, &mut rng).unwrap()).collect();
        for alpha in [0.01, 0.05, 0.1] {
            let m = base.with_alpha(alpha).unwrap();
            let flagged = states
                .iter()
                .filter(|x| m.classify(x).unwrap().label == Label::Outlier)
                .count();
            let frac = flagged as f64 / states.len() as f64;
            assert!((frac - alpha).abs() <= 0.005, "alpha {alpha}: flagged {frac}");
        }
    }

    #[test]
    fn e2_equals_e1_on_standardized_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut pairs = Vec::new();
        for class in 0..2usize {
            let mu: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut sigma = Matrix::identity(3);
            for i in 0..3 {
                sigma[(i, i)] = rng.gen_range(0.2..4.0);
            }
            pairs.extend(gaussian_pairs(&mut rng, &mu, &sigma, 250, class));
        }
        let m = fit_detector(&pairs, Method::E2, None, 0.05, &EstimationConfig::default())
            .unwrap();
        for _ in 0..40 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (got, _) = m.detection_distance(&x).unwrap();
            // Per class: squared Euclidean after standardizing each
            // coordinate by that class's standard deviation.
            let mut want = f64::INFINITY;
            for g in m.classes().values() {
                let d: f64 = (0..3)
                    .map(|j| {
                        let z = (x[j] - g.location[j]) / g.scatter[(j, j)].sqrt();
                        z * z
                    })
                    .sum();
                want = want.min(d);
            }
            assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn save_load_round_trip_scores_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let mut pairs = Vec::new();
        for class in 0..3usize {
            let mu: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let sigma = Matrix::identity(6);
            pairs.extend(gaussian_pairs(&mut rng, &mu, &sigma, 200, class));
        }
        let cfg = EstimationConfig::new(Method::Md, 17);
        let m = fit_detector(&pairs, Method::Md, Some(4), 0.05, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let loaded = DetectorModel::load(&path).unwrap();
        assert_eq!(loaded.method(), m.method());
        assert_eq!(loaded.alpha(), m.alpha());
        assert_eq!(loaded.dof(), m.dof());
        assert_eq!(loaded.threshold(), m.threshold());
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (d0, c0) = m.detection_distance(&x).unwrap();
            let (d1, c1) = loaded.detection_distance(&x).unwrap();
            assert_eq!(d0.to_bits(), d1.to_bits(), "scores must round-trip exactly");
            assert_eq!(c0, c1);
        }
    }

    #[test]
    fn load_reports_missing_fields_and_bad_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truncated.json");
        std::fs::write(&path, r#"{"format_version":1,"method":"md","k":2}"#).unwrap();
        match DetectorModel::load(&path) {
            Err(Error::Parse { detail, .. }) => {
                assert!(detail.contains("alpha"), "error should name the missing field: {detail}")
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let path2 = dir.path().join("future.json");
        std::fs::write(
            &path2,
            r#"{"format_version":9,"method":"md","alpha":0.05,"k":1,
                "pca":null,"classes":[{"id":0,"n":3,"mu":[0.0],"sigma":[[1.0]]}],
                "metadata":{"seed":0,"ridge_warnings":[]}}"#,
        )
        .unwrap();
        assert!(matches!(
            DetectorModel::load(&path2),
            Err(Error::UnsupportedFormatVersion { found: 9, expected: 1 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn shrinking_alpha_never_flags_more(
            seed in 0u64..500,
            a_small in 0.005f64..0.2,
            extra in 0.01f64..0.5,
        ) {
            let a_big = (a_small + extra).min(0.9);
            let m_small = two_class_model(a_small);
            let m_big = two_class_model(a_big);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let x = vec![rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)];
                let small = m_small.classify(&x).unwrap().label;
                let big = m_big.classify(&x).unwrap().label;
                // Anything flagged under the stricter (smaller) alpha must
                // also be flagged under the larger alpha.
                if small == Label::Outlier {
                    prop_assert_eq!(big, Label::Outlier);
                }
            }
        }
    }
}
