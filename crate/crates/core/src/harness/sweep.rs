//! Projection-dimension sensitivity sweep: the evaluation grid repeated for
//! each configured k (including "none" for raw features), concatenated into
//! one CSV in k-list order.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::csvio::{write_csv, RunManifest};
use crate::harness::eval::{eval_rows, obtain_policy, EvalRow, EVAL_CSV_HEADER};

/// Run the sweep and emit `sweep.csv` plus config and manifest.
pub fn sensitivity_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let canonical = cfg.canonical_text();
    let mut manifest = RunManifest::begin(&canonical, cfg.seeds.clone());
    std::fs::create_dir_all(out_dir)?;

    let policy = obtain_policy(cfg)?;
    if cfg.policy_path.is_none() {
        policy.save(&out_dir.join("policy.json"))?;
        manifest.record("policy.json");
    }

    let mut rows: Vec<EvalRow> = Vec::new();
    for &k in &cfg.k_list {
        rows.extend(eval_rows(cfg, &policy, k)?);
    }
    let csv_path = out_dir.join("sweep.csv");
    let csv_rows: Vec<Vec<String>> = rows.iter().map(EvalRow::to_csv).collect();
    write_csv(&csv_path, EVAL_CSV_HEADER, &csv_rows)?;
    manifest.record("sweep.csv");

    std::fs::write(out_dir.join("config_used.txt"), &canonical)?;
    manifest.record("config_used.txt");
    manifest.finish(out_dir)?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;
    use crate::outliers::OutlierSpec;
    use crate::toyrl::EnvKind;

    #[test]
    fn full_rank_projection_matches_raw_features() {
        // k = feature width is a pure rotation, so distances and therefore
        // accuracies must agree with the no-projection path.
        let cfg = ExperimentConfig {
            methods: vec![Method::Md],
            outliers: vec![OutlierSpec::Ood { source: EnvKind::Chain }],
            alphas: vec![0.05],
            lambdas: vec![0.0],
            seeds: vec![0],
            n_fit: 500,
            n_test: 200,
            iterations: 10,
            hidden: 16,
            k_list: vec![Some(16), None],
            ..ExperimentConfig::default()
        };
        let policy = obtain_policy(&cfg).unwrap();
        let full: Vec<EvalRow> = eval_rows(&cfg, &policy, Some(16)).unwrap();
        let raw: Vec<EvalRow> = eval_rows(&cfg, &policy, None).unwrap();
        assert_eq!(full.len(), raw.len());
        for (a, b) in full.iter().zip(&raw) {
            assert!(
                (a.accuracy - b.accuracy).abs() <= 1e-9,
                "accuracy {} vs {}",
                a.accuracy,
                b.accuracy
            );
            assert!((a.f1 - b.f1).abs() <= 1e-9);
        }
    }

    #[test]
    fn sweep_concatenates_k_blocks_in_order() {
        let cfg = ExperimentConfig {
            methods: vec![Method::E1],
            outliers: vec![OutlierSpec::Random { std: 0.5 }],
            alphas: vec![0.05],
            lambdas: vec![0.0],
            seeds: vec![0],
            n_fit: 300,
            n_test: 100,
            iterations: 8,
            k_list: vec![Some(2), None],
            ..ExperimentConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let csv = sensitivity_sweep(&cfg, dir.path()).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let k_col = |line: &str| line.split(',').nth(5).unwrap().to_string();
        assert_eq!(k_col(lines[1]), "2");
        assert_eq!(k_col(lines[2]), "none");
    }
}
