//! Detector workflows over trajectory dumps: fit a detector from a dump's
//! states under a policy's feature map, and score a dump with a saved model.

use std::path::Path;

use crate::detectors::{fit_detector, DetectorModel, Label};
use crate::error::Result;
use crate::estimators::{EstimationConfig, Method};
use crate::online::flag_trajectory;
use crate::toyrl::{load_trajectories, SoftmaxPolicy};

/// Fit a detector on every (feature, action) pair of a trajectory dump.
pub fn fit_from_trajectories(
    dump: &Path,
    policy: &SoftmaxPolicy,
    method: Method,
    k: Option<usize>,
    alpha: f64,
    seed: u64,
) -> Result<DetectorModel> {
    let trajectories = load_trajectories(dump)?;
    let mut pairs = Vec::new();
    for tr in &trajectories {
        for step in &tr.steps {
            pairs.push((policy.features(&step.obs)?, step.action));
        }
    }
    let est = EstimationConfig::new(method, seed);
    fit_detector(&pairs, method, k, alpha, &est)
}

/// One scored state of a dump.
#[derive(Clone, Debug)]
pub struct ScoredStep {
    pub env_index: usize,
    pub t: usize,
    pub action: usize,
    pub distance: f64,
    pub label: Label,
}

/// Per-trajectory flag decision.
#[derive(Clone, Debug)]
pub struct TrajectoryVerdict {
    pub env_index: usize,
    pub outlier_fraction: f64,
    pub flagged: bool,
}

/// Score every state of a dump and flag whole trajectories.
pub fn score_trajectories(
    dump: &Path,
    policy: &SoftmaxPolicy,
    model: &DetectorModel,
    flag_threshold: f64,
) -> Result<(Vec<ScoredStep>, Vec<TrajectoryVerdict>)> {
    let trajectories = load_trajectories(dump)?;
    let mut steps = Vec::new();
    let mut verdicts = Vec::new();
    for tr in &trajectories {
        let mut labels = Vec::with_capacity(tr.len());
        for (t, step) in tr.steps.iter().enumerate() {
            let det = model.classify(&policy.features(&step.obs)?)?;
            labels.push(det.label);
            steps.push(ScoredStep {
                env_index: tr.env_index,
                t,
                action: step.action,
                distance: det.distance,
                label: det.label,
            });
        }
        let outliers = labels.iter().filter(|l| **l == Label::Outlier).count();
        verdicts.push(TrajectoryVerdict {
            env_index: tr.env_index,
            outlier_fraction: outliers as f64 / labels.len() as f64,
            flagged: flag_trajectory(&labels, flag_threshold)?,
        });
    }
    Ok((steps, verdicts))
}
