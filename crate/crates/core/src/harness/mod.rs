//! Experiment harness: configuration, the evaluation-grid and training-curve
//! drivers, the projection sweep, dump-based detector workflows, and CSV/SVG
//! emission with run manifests.

pub mod config;
pub mod csvio;
pub mod dumpio;
pub mod eval;
pub mod svg;
pub mod sweep;
pub mod train;

pub use config::{parse_kv, ExperimentConfig, Scenario};
pub use csvio::{fnv1a64, write_csv, RunManifest};
pub use dumpio::{fit_from_trajectories, score_trajectories, ScoredStep, TrajectoryVerdict};
pub use eval::{eval_rows, obtain_policy, run_eval_experiment, EvalRow, EVAL_CSV_HEADER};
pub use svg::{line_chart, Series};
pub use sweep::sensitivity_sweep;
pub use train::{
    averaged_curves, collect_curves, run_train_experiment, MethodCurves, TRAIN_AVG_CSV_HEADER,
    TRAIN_CSV_HEADER,
};
