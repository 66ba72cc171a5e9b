//! Evaluation-phase experiment: fit detectors on a stream of state-action
//! pairs collected under a trained policy (a fraction `lambda` of states
//! replaced by outliers), then score a balanced half-clean/half-outlier test
//! set. One CSV row per (method, outlier, alpha, lambda, seed) cell.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detectors::fit_detector;
use crate::error::{Error, Result};
use crate::estimators::{EstimationConfig, Method};
use crate::harness::config::{ExperimentConfig, Scenario};
use crate::harness::csvio::{write_csv, RunManifest};
use crate::numstat::derive_seed;
use crate::outliers::{fgsm_perturb, gaussian_noise, OodSampler, OutlierSpec};
use crate::toyrl::{train_policy, EnvKind, SoftmaxPolicy, ToyEnv, OBS_HI, OBS_LO};

pub const EVAL_CSV_HEADER: &[&str] = &[
    "method",
    "outlier_kind",
    "strength",
    "alpha",
    "lambda",
    "k",
    "seed",
    "accuracy",
    "f1",
    "n_test",
];

/// One grid cell's result.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub method: Method,
    pub outlier: OutlierSpec,
    pub alpha: f64,
    pub lambda: f64,
    pub k: Option<usize>,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub n_test: usize,
}

impl EvalRow {
    pub fn to_csv(&self) -> Vec<String> {
        vec![
            self.method.to_string(),
            self.outlier.kind_str().to_string(),
            self.outlier.strength().to_string(),
            self.alpha.to_string(),
            self.lambda.to_string(),
            self.k.map_or("none".to_string(), |k| k.to_string()),
            self.seed.to_string(),
            self.accuracy.to_string(),
            self.f1.to_string(),
            self.n_test.to_string(),
        ]
    }
}

/// Load the configured checkpoint, or train a fresh policy on the target
/// environment when none is configured.
pub fn obtain_policy(cfg: &ExperimentConfig) -> Result<SoftmaxPolicy> {
    match &cfg.policy_path {
        Some(path) => SoftmaxPolicy::load(path),
        None => Ok(train_policy(cfg.env, &cfg.trainer_config(cfg.seeds[0]))?.policy),
    }
}

/// Replace a clean observation by the outlier of `spec`, or pass it through.
fn perturb(
    policy: &SoftmaxPolicy,
    clean: &[f64],
    spec: &OutlierSpec,
    noise_rng: &mut ChaCha8Rng,
    ood: &mut Option<OodSampler>,
) -> Result<Vec<f64>> {
    let bounds = (OBS_LO, OBS_HI);
    match spec {
        OutlierSpec::Random { std } => gaussian_noise(clean, *std, bounds, noise_rng),
        OutlierSpec::Adversarial { epsilon } => fgsm_perturb(policy, clean, *epsilon, bounds),
        OutlierSpec::Ood { .. } => {
            let sampler = ood
                .as_mut()
                .expect("ood sampler prepared whenever the spec is ood");
            sampler.next_state()
        }
    }
}

fn ood_sampler_for(
    spec: &OutlierSpec,
    target: EnvKind,
    seed: u64,
) -> Result<Option<OodSampler>> {
    match spec {
        OutlierSpec::Ood { source } => {
            Ok(Some(OodSampler::new(*source, target.obs_dim(), seed)?))
        }
        _ => Ok(None),
    }
}

/// Collect `n` (feature, action) pairs under the policy with each state
/// independently replaced by an outlier with probability `lambda`. The agent
/// acts on whatever it observes; the real environment always advances.
fn collect_fit_pairs(
    policy: &SoftmaxPolicy,
    cfg: &ExperimentConfig,
    spec: &OutlierSpec,
    lambda: f64,
    seed: u64,
) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut env = ToyEnv::new(cfg.env, derive_seed(seed, 0));
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut coin_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut ood = ood_sampler_for(spec, cfg.env, derive_seed(seed, 4))?;
    let mut current = env.reset();
    let mut pairs = Vec::with_capacity(cfg.n_fit);
    for _ in 0..cfg.n_fit {
        use rand::Rng;
        let contaminate = lambda > 0.0 && coin_rng.gen_bool(lambda);
        let observed = if contaminate {
            perturb(policy, &current, spec, &mut noise_rng, &mut ood)?
        } else {
            current.clone()
        };
        let fwd = policy.forward(&observed)?;
        let action = SoftmaxPolicy::sample_action(&fwd.probs, &mut action_rng);
        pairs.push((fwd.features, action));
        let out = env.step(action)?;
        current = if out.done { env.reset() } else { out.obs };
    }
    Ok(pairs)
}

/// Balanced test set: half clean states, half outliers, with ground truth.
fn build_test_set(
    policy: &SoftmaxPolicy,
    cfg: &ExperimentConfig,
    spec: &OutlierSpec,
    seed: u64,
) -> Result<Vec<(Vec<f64>, bool)>> {
    let half = cfg.n_test / 2;
    let mut set = Vec::with_capacity(cfg.n_test);
    // Clean half: a fresh stream under the policy.
    let mut env = ToyEnv::new(cfg.env, derive_seed(seed, 0));
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut current = env.reset();
    for _ in 0..half {
        let fwd = policy.forward(&current)?;
        let action = SoftmaxPolicy::sample_action(&fwd.probs, &mut action_rng);
        set.push((fwd.features, false));
        let out = env.step(action)?;
        current = if out.done { env.reset() } else { out.obs };
    }
    // Outlier half: another fresh stream, every state replaced.
    let mut env = ToyEnv::new(cfg.env, derive_seed(seed, 10));
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12));
    let mut ood = ood_sampler_for(spec, cfg.env, derive_seed(seed, 13))?;
    let mut current = env.reset();
    for _ in 0..half {
        let observed = perturb(policy, &current, spec, &mut noise_rng, &mut ood)?;
        let fwd = policy.forward(&observed)?;
        let action = SoftmaxPolicy::sample_action(&fwd.probs, &mut action_rng);
        set.push((fwd.features, true));
        let out = env.step(action)?;
        current = if out.done { env.reset() } else { out.obs };
    }
    Ok(set)
}

/// Run the full evaluation grid at one projection dimension. Rows come out
/// in grid order: method, outlier, alpha, lambda, seed.
pub fn eval_rows(
    cfg: &ExperimentConfig,
    policy: &SoftmaxPolicy,
    k: Option<usize>,
) -> Result<Vec<EvalRow>> {
    let n_seeds = cfg.seeds.len();
    let n_outliers = cfg.outliers.len();
    let n_lambdas = cfg.lambdas.len();

    // Test sets per (seed, outlier); fitting sets per (seed, outlier, lambda).
    // Both are independent of method and alpha, so they are built once. Test
    // sets never touch the fitting path below.
    let mut tests = Vec::with_capacity(n_seeds);
    let mut fits = Vec::with_capacity(n_seeds);
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let mut tests_o = Vec::with_capacity(n_outliers);
        let mut fits_o = Vec::with_capacity(n_outliers);
        for (oi, spec) in cfg.outliers.iter().enumerate() {
            let cell = derive_seed(seed, 7000 + (si * n_outliers + oi) as u64);
            tests_o.push(build_test_set(policy, cfg, spec, derive_seed(cell, 1))?);
            let mut fits_l = Vec::with_capacity(n_lambdas);
            for (li, &lambda) in cfg.lambdas.iter().enumerate() {
                fits_l.push(collect_fit_pairs(
                    policy,
                    cfg,
                    spec,
                    lambda,
                    derive_seed(cell, 100 + li as u64),
                )?);
            }
            fits_o.push(fits_l);
        }
        tests.push(tests_o);
        fits.push(fits_o);
    }

    let base_alpha = cfg.alphas[0];
    let mut rows = Vec::new();
    for method in &cfg.methods {
        // Fit once per cell at the first alpha; other alphas only move the
        // threshold, so they reuse the fit.
        let mut models = Vec::with_capacity(n_seeds);
        for (si, &seed) in cfg.seeds.iter().enumerate() {
            let mut models_o = Vec::with_capacity(n_outliers);
            for oi in 0..n_outliers {
                let mut models_l = Vec::with_capacity(n_lambdas);
                for li in 0..n_lambdas {
                    let est = EstimationConfig::new(
                        *method,
                        derive_seed(seed, 9000 + (oi * n_lambdas + li) as u64),
                    );
                    models_l.push(fit_detector(
                        &fits[si][oi][li],
                        *method,
                        k,
                        base_alpha,
                        &est,
                    )?);
                }
                models_o.push(models_l);
            }
            models.push(models_o);
        }
        for (oi, spec) in cfg.outliers.iter().enumerate() {
            for &alpha in &cfg.alphas {
                for (li, &lambda) in cfg.lambdas.iter().enumerate() {
                    for (si, &seed) in cfg.seeds.iter().enumerate() {
                        let base = &models[si][oi][li];
                        let model = if alpha == base_alpha {
                            base.clone()
                        } else {
                            base.with_alpha(alpha)?
                        };
                        let report = model.evaluate(&tests[si][oi])?;
                        rows.push(EvalRow {
                            method: *method,
                            outlier: *spec,
                            alpha,
                            lambda,
                            k,
                            seed,
                            accuracy: report.accuracy,
                            f1: report.f1,
                            n_test: tests[si][oi].len(),
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Run the evaluation experiment and emit `eval.csv`, the policy checkpoint,
/// the effective config, and a manifest into the output directory.
pub fn run_eval_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    if let Some(s) = cfg.scenario {
        if s != Scenario::Eval {
            return Err(Error::Config(format!(
                "config declares scenario {s}, but this is the eval driver"
            )));
        }
    }
    let canonical = cfg.canonical_text();
    let mut manifest = RunManifest::begin(&canonical, cfg.seeds.clone());
    std::fs::create_dir_all(out_dir)?;

    let policy = obtain_policy(cfg)?;
    if cfg.policy_path.is_none() {
        policy.save(&out_dir.join("policy.json"))?;
        manifest.record("policy.json");
    }

    let rows = eval_rows(cfg, &policy, cfg.k)?;
    let csv_path = out_dir.join("eval.csv");
    let csv_rows: Vec<Vec<String>> = rows.iter().map(EvalRow::to_csv).collect();
    write_csv(&csv_path, EVAL_CSV_HEADER, &csv_rows)?;
    manifest.record("eval.csv");

    std::fs::write(out_dir.join("config_used.txt"), &canonical)?;
    manifest.record("config_used.txt");
    manifest.finish(out_dir)?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            methods: vec![Method::Md],
            outliers: vec![OutlierSpec::Ood { source: EnvKind::Chain }],
            alphas: vec![0.05],
            lambdas: vec![0.0],
            seeds: vec![0],
            n_fit: 600,
            n_test: 200,
            // Enough training for the feature map to separate foreign
            // states; an immature representation blurs the clouds.
            iterations: 30,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn degenerate_grid_yields_one_row_plus_header() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let csv = run_eval_experiment(&cfg, dir.path()).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], EVAL_CSV_HEADER.join(","));
        assert!(lines[1].starts_with("md,ood,0,0.05,0,8,0,"));
    }

    #[test]
    fn far_outliers_and_clean_fit_give_high_accuracy() {
        let cfg = small_cfg();
        let policy = obtain_policy(&cfg).unwrap();
        let rows = eval_rows(&cfg, &policy, cfg.k).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].accuracy >= 0.95, "accuracy {}", rows[0].accuracy);
    }

    #[test]
    fn rerunning_the_experiment_is_byte_identical() {
        let cfg = small_cfg();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        let a = run_eval_experiment(&cfg, da.path()).unwrap();
        let b = run_eval_experiment(&cfg, db.path()).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn scenario_mismatch_is_a_config_error() {
        let mut cfg = small_cfg();
        cfg.scenario = Some(Scenario::Train);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_eval_experiment(&cfg, dir.path()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let mut cfg = small_cfg();
        cfg.policy_path = Some(PathBuf::from("/nonexistent/policy.json"));
        assert!(obtain_policy(&cfg).is_err());
    }
}
