//! Training-phase experiment: run the online detection loop once per
//! (screening method, seed), emit per-seed curves, seed-averaged curves, and
//! optional SVG charts.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::harness::config::{ExperimentConfig, Scenario};
use crate::harness::csvio::{write_csv, RunManifest};
use crate::harness::svg::{line_chart, Series};
use crate::online::{IterationMetrics, OnlineState, TrainMethod};

pub const TRAIN_CSV_HEADER: &[&str] = &[
    "method",
    "seed",
    "iteration",
    "mean_return",
    "det_accuracy",
    "det_f1",
    "retained_fraction",
    "refits_done",
];

pub const TRAIN_AVG_CSV_HEADER: &[&str] = &[
    "method",
    "iteration",
    "mean_return",
    "det_accuracy",
    "det_f1",
    "retained_fraction",
];

/// Full curves of one (method, seed) run.
#[derive(Clone, Debug)]
pub struct MethodCurves {
    pub method: TrainMethod,
    pub seed: u64,
    pub metrics: Vec<IterationMetrics>,
}

/// Run the online loop for every configured screening method and seed.
pub fn collect_curves(cfg: &ExperimentConfig) -> Result<Vec<MethodCurves>> {
    let plan = cfg.plan();
    let mut out = Vec::new();
    for &mode in &cfg.train_methods {
        let detector_method = match mode {
            TrainMethod::Detector(m) => m,
            // Unused by oracle/coin modes; any value works.
            _ => Method::Md,
        };
        for &seed in &cfg.seeds {
            let mut state = OnlineState::new(
                cfg.env,
                cfg.trainer_config(seed),
                cfg.online_config(detector_method, seed),
                plan.clone(),
                mode,
            )?;
            let metrics = state.run()?;
            out.push(MethodCurves { method: mode, seed, metrics });
        }
    }
    Ok(out)
}

fn per_seed_rows(curves: &[MethodCurves]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for c in curves {
        for m in &c.metrics {
            rows.push(vec![
                c.method.to_string(),
                c.seed.to_string(),
                m.iteration.to_string(),
                m.mean_return.to_string(),
                m.det_accuracy.to_string(),
                m.det_f1.to_string(),
                m.retained_fraction.to_string(),
                m.refits_done.to_string(),
            ]);
        }
    }
    rows
}

/// Seed-averaged curve per method, in `train_methods` order. NaN warmup
/// entries average to NaN.
pub fn averaged_curves(
    cfg: &ExperimentConfig,
    curves: &[MethodCurves],
) -> Vec<(TrainMethod, Vec<IterationMetrics>)> {
    let n_seeds = cfg.seeds.len() as f64;
    let mut out = Vec::new();
    for &mode in &cfg.train_methods {
        let runs: Vec<&MethodCurves> =
            curves.iter().filter(|c| c.method == mode).collect();
        let iterations = runs.first().map_or(0, |c| c.metrics.len());
        let mut avg = Vec::with_capacity(iterations);
        for i in 0..iterations {
            let sum = |f: &dyn Fn(&IterationMetrics) -> f64| {
                runs.iter().map(|c| f(&c.metrics[i])).sum::<f64>() / n_seeds
            };
            avg.push(IterationMetrics {
                iteration: i,
                mean_return: sum(&|m| m.mean_return),
                det_accuracy: sum(&|m| m.det_accuracy),
                det_f1: sum(&|m| m.det_f1),
                retained_fraction: sum(&|m| m.retained_fraction),
                refits_done: 0,
            });
        }
        out.push((mode, avg));
    }
    out
}

fn chart_series(
    averaged: &[(TrainMethod, Vec<IterationMetrics>)],
    f: &dyn Fn(&IterationMetrics) -> f64,
) -> Vec<Series> {
    averaged
        .iter()
        .map(|(mode, ms)| Series {
            name: mode.to_string(),
            points: ms.iter().map(|m| (m.iteration as f64, f(m))).collect(),
        })
        .collect()
}

/// Run the training experiment and emit curves.csv, curves_avg.csv, config,
/// manifest, and (optionally) SVG charts into the output directory.
pub fn run_train_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    if let Some(s) = cfg.scenario {
        if s != Scenario::Train {
            return Err(Error::Config(format!(
                "config declares scenario {s}, but this is the train driver"
            )));
        }
    }
    let canonical = cfg.canonical_text();
    let mut manifest = RunManifest::begin(&canonical, cfg.seeds.clone());
    std::fs::create_dir_all(out_dir)?;

    let curves = collect_curves(cfg)?;
    let csv_path = out_dir.join("curves.csv");
    write_csv(&csv_path, TRAIN_CSV_HEADER, &per_seed_rows(&curves))?;
    manifest.record("curves.csv");

    let averaged = averaged_curves(cfg, &curves);
    let avg_rows: Vec<Vec<String>> = averaged
        .iter()
        .flat_map(|(mode, ms)| {
            ms.iter().map(|m| {
                vec![
                    mode.to_string(),
                    m.iteration.to_string(),
                    m.mean_return.to_string(),
                    m.det_accuracy.to_string(),
                    m.det_f1.to_string(),
                    m.retained_fraction.to_string(),
                ]
            })
        })
        .collect();
    write_csv(&out_dir.join("curves_avg.csv"), TRAIN_AVG_CSV_HEADER, &avg_rows)?;
    manifest.record("curves_avg.csv");

    if cfg.emit_svg {
        line_chart(
            &out_dir.join("mean_return.svg"),
            "Mean return (seed average, clean environments)",
            "iteration",
            "mean return",
            &chart_series(&averaged, &|m| m.mean_return),
        )?;
        manifest.record("mean_return.svg");
        line_chart(
            &out_dir.join("det_accuracy.svg"),
            "Per-state detection accuracy (seed average)",
            "iteration",
            "accuracy",
            &chart_series(&averaged, &|m| m.det_accuracy),
        )?;
        manifest.record("det_accuracy.svg");
    }

    std::fs::write(out_dir.join("config_used.txt"), &canonical)?;
    manifest.record("config_used.txt");
    manifest.finish(out_dir)?;
    Ok(csv_path)
}
