//! Detection while training: moving-window sample buffers, a pair of
//! self-supervised detectors, trajectory-level flagging, and deletion of
//! flagged trajectories from the PPO batch.
//!
//! The loop spends the first half of its iterations on clean data, filling
//! the inlier buffer and fitting the initial projection and detector. After
//! that, every collected trajectory is scored state by state; trajectories
//! whose outlier fraction reaches the flag threshold are routed to the
//! outlier buffer and dropped from training, the rest feed both the inlier
//! buffer and the policy update. Detectors refit on a fixed sample budget,
//! the projection on a slower iteration period.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detectors::{f1_score, fit_detector_with_pca, DetectorModel, Label};
use crate::error::{Error, Result};
use crate::estimators::{EstimationConfig, Method};
use crate::numstat::{derive_seed, fit_pca, Matrix, PcaModel};
use crate::outliers::OutlierSpec;
use crate::toyrl::{
    ppo_update, rollout, EnvKind, EnvSlot, SoftmaxPolicy, Trajectory, TrainerConfig,
};

/// Per-class FIFO queues with a shared per-class capacity.
#[derive(Clone, Debug)]
pub struct WindowBuffer {
    capacity_per_class: usize,
    classes: BTreeMap<usize, VecDeque<Vec<f64>>>,
}

impl WindowBuffer {
    pub fn new(capacity_per_class: usize) -> WindowBuffer {
        WindowBuffer { capacity_per_class, classes: BTreeMap::new() }
    }

    pub fn capacity_per_class(&self) -> usize {
        self.capacity_per_class
    }

    /// Append a sample, evicting the oldest entry of the same class when the
    /// class queue is full.
    pub fn push(&mut self, feature: Vec<f64>, class: usize) {
        let q = self.classes.entry(class).or_default();
        if q.len() == self.capacity_per_class {
            q.pop_front();
        }
        q.push_back(feature);
    }

    pub fn class_len(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, VecDeque::len)
    }

    pub fn total(&self) -> usize {
        self.classes.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Buffer contents as (feature, class) pairs, classes in ascending
    /// order, samples in insertion order within a class.
    pub fn pairs(&self) -> Vec<(Vec<f64>, usize)> {
        let mut out = Vec::with_capacity(self.total());
        for (&class, q) in &self.classes {
            for f in q {
                out.push((f.clone(), class));
            }
        }
        out
    }
}

/// Refit a detector from buffer contents under a fixed (possibly absent)
/// projection.
pub fn refit_from_buffer(
    buffer: &WindowBuffer,
    method: Method,
    pca: Option<PcaModel>,
    alpha: f64,
    config: &EstimationConfig,
) -> Result<DetectorModel> {
    let pairs = buffer.pairs();
    fit_detector_with_pca(&pairs, method, pca, alpha, config)
}

/// The inlier detector plus, once outliers have been collected, a second
/// detector fit on them; conflicts between the two resolve by a seeded coin.
#[derive(Clone, Debug)]
pub struct DoubleDetector {
    inlier: DetectorModel,
    outlier: Option<DetectorModel>,
    rng: ChaCha8Rng,
}

impl DoubleDetector {
    pub fn new(inlier: DetectorModel, seed: u64) -> DoubleDetector {
        DoubleDetector { inlier, outlier: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn inlier(&self) -> &DetectorModel {
        &self.inlier
    }

    pub fn outlier(&self) -> Option<&DetectorModel> {
        self.outlier.as_ref()
    }

    pub fn set_inlier(&mut self, model: DetectorModel) {
        self.inlier = model;
    }

    pub fn set_outlier(&mut self, model: DetectorModel) {
        self.outlier = Some(model);
    }

    /// Two-detector vote. The primary verdict comes from the inlier
    /// detector; the outlier detector answers "is this a member of the
    /// outlier distribution?" (absent detector: it echoes the primary).
    /// Agreement stands; disagreement falls to a fair coin.
    pub fn double_detect(&mut self, feature: &[f64]) -> Result<Label> {
        let primary = self.inlier.classify(feature)?.label;
        let member = match &self.outlier {
            None => return Ok(primary),
            Some(od) => od.classify(feature)?.label == Label::Inlier,
        };
        match (primary, member) {
            (Label::Inlier, false) => Ok(Label::Inlier),
            (Label::Outlier, true) => Ok(Label::Outlier),
            _ => Ok(if self.rng.gen_bool(0.5) { Label::Outlier } else { Label::Inlier }),
        }
    }
}

/// True iff the outlier fraction reaches the threshold.
pub fn flag_trajectory(labels: &[Label], threshold: f64) -> Result<bool> {
    if labels.is_empty() {
        return Err(Error::EmptySample);
    }
    let outliers = labels.iter().filter(|l| **l == Label::Outlier).count();
    Ok(outliers as f64 / labels.len() as f64 >= threshold)
}

/// How trajectories are screened during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMethod {
    /// Distance-based detection with the given estimator.
    Detector(Method),
    /// Oracle routing from ground-truth tags (upper baseline).
    Auto,
    /// Fair-coin labels (lower baseline).
    Random,
}

impl TrainMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMethod::Detector(m) => m.as_str(),
            TrainMethod::Auto => "auto",
            TrainMethod::Random => "random",
        }
    }
}

impl fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<TrainMethod> {
        match s {
            "auto" => Ok(TrainMethod::Auto),
            "random" => Ok(TrainMethod::Random),
            other => Ok(TrainMethod::Detector(other.parse()?)),
        }
    }
}

/// Knobs of the online loop.
#[derive(Clone, Debug)]
pub struct OnlineConfig {
    pub method: Method,
    pub alpha: f64,
    /// Projection dimension; `None` scores raw features. Low-dimensional
    /// scoring is much less sensitive to feature drift between refits.
    pub k: Option<usize>,
    /// Per-refit sample quota per class.
    pub n_c: usize,
    /// Moving-window multiplier: buffers hold the last `window_m * n_c`
    /// samples per class.
    pub window_m: usize,
    pub warmup_fraction: f64,
    /// Projection refit period in post-warmup iterations (0 = never).
    pub pca_refit_period: usize,
    pub flag_threshold: f64,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> OnlineConfig {
        OnlineConfig {
            method: Method::Md,
            alpha: 0.05,
            k: Some(8),
            n_c: 512,
            window_m: 2,
            warmup_fraction: 0.5,
            pca_refit_period: 300,
            flag_threshold: 0.5,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "warmup fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !(self.flag_threshold > 0.0 && self.flag_threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "flag threshold must lie in (0, 1], got {}",
                self.flag_threshold
            )));
        }
        if self.n_c == 0 || self.window_m == 0 {
            return Err(Error::InvalidParameter(
                "n_c and window_m must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the training-curve CSV.
#[derive(Clone, Copy, Debug)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_return: f64,
    /// Per-state detection accuracy against ground-truth tags; NaN during
    /// warmup when nothing is detected.
    pub det_accuracy: f64,
    pub det_f1: f64,
    pub retained_fraction: f64,
    pub refits_done: usize,
}

/// Full state of a training-with-detection run.
#[derive(Clone)]
pub struct OnlineState {
    trainer: TrainerConfig,
    cfg: OnlineConfig,
    mode: TrainMethod,
    plan: Vec<Option<OutlierSpec>>,
    policy: SoftmaxPolicy,
    slots: Vec<EnvSlot>,
    update_rng: ChaCha8Rng,
    coin_rng: ChaCha8Rng,
    b_inlier: WindowBuffer,
    b_outlier: WindowBuffer,
    detector: Option<DoubleDetector>,
    pca: Option<PcaModel>,
    iteration: usize,
    warmup_iters: usize,
    samples_since_refit: usize,
    refits_done: usize,
    last_mean_return: f64,
    warnings: Vec<String>,
}

impl OnlineState {
    pub fn new(
        kind: EnvKind,
        trainer: TrainerConfig,
        cfg: OnlineConfig,
        plan: Vec<Option<OutlierSpec>>,
        mode: TrainMethod,
    ) -> Result<OnlineState> {
        trainer.validate()?;
        cfg.validate()?;
        if plan.len() != trainer.n_envs {
            return Err(Error::DimMismatch { expected: trainer.n_envs, got: plan.len() });
        }
        for spec in plan.iter().flatten() {
            spec.validate()?;
        }
        let warmup_iters = (trainer.iterations as f64 * cfg.warmup_fraction).floor() as usize;
        if warmup_iters == 0 || warmup_iters >= trainer.iterations {
            return Err(Error::InvalidParameter(format!(
                "warmup of {warmup_iters} iterations leaves no room on one side \
                 (iterations = {})",
                trainer.iterations
            )));
        }
        let policy = SoftmaxPolicy::new(
            kind.obs_dim(),
            trainer.hidden,
            kind.n_actions(),
            derive_seed(trainer.seed, 100),
        );
        let slots = (0..trainer.n_envs).map(|i| EnvSlot::new(kind, trainer.seed, i)).collect();
        let capacity = cfg.window_m * cfg.n_c;
        Ok(OnlineState {
            update_rng: ChaCha8Rng::seed_from_u64(derive_seed(trainer.seed, 101)),
            coin_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 201)),
            b_inlier: WindowBuffer::new(capacity),
            b_outlier: WindowBuffer::new(capacity),
            detector: None,
            pca: None,
            iteration: 0,
            warmup_iters,
            samples_since_refit: 0,
            refits_done: 0,
            last_mean_return: 0.0,
            warnings: Vec::new(),
            trainer,
            cfg,
            mode,
            plan,
            policy,
            slots,
        })
    }

    pub fn policy(&self) -> &SoftmaxPolicy {
        &self.policy
    }

    pub fn warmup_iterations(&self) -> usize {
        self.warmup_iters
    }

    pub fn detector(&self) -> Option<&DoubleDetector> {
        self.detector.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn estimation_config(&self) -> EstimationConfig {
        EstimationConfig::new(
            self.cfg.method,
            derive_seed(self.cfg.seed, 300 + self.refits_done as u64),
        )
    }

    fn fit_pca_from_inliers(&mut self) -> Result<()> {
        let Some(k) = self.cfg.k else {
            return Ok(());
        };
        let rows: Vec<Vec<f64>> =
            self.b_inlier.pairs().into_iter().map(|(f, _)| f).collect();
        let x = Matrix::from_rows(&rows)?;
        self.pca = Some(fit_pca(&x, k)?);
        Ok(())
    }

    /// Refit both detectors from their buffers; failures keep the previous
    /// model and leave a warning instead of aborting training.
    fn refit_detectors(&mut self) {
        let est = self.estimation_config();
        match refit_from_buffer(
            &self.b_inlier,
            self.cfg.method,
            self.pca.clone(),
            self.cfg.alpha,
            &est,
        ) {
            Ok(model) => match &mut self.detector {
                Some(dd) => dd.set_inlier(model),
                None => {
                    self.detector =
                        Some(DoubleDetector::new(model, derive_seed(self.cfg.seed, 202)));
                }
            },
            Err(e) => self
                .warnings
                .push(format!("iteration {}: inlier refit skipped: {e}", self.iteration)),
        }
        if !self.b_outlier.is_empty() {
            match refit_from_buffer(
                &self.b_outlier,
                self.cfg.method,
                self.pca.clone(),
                self.cfg.alpha,
                &est,
            ) {
                Ok(model) => {
                    if let Some(dd) = &mut self.detector {
                        dd.set_outlier(model);
                    }
                }
                Err(e) => self.warnings.push(format!(
                    "iteration {}: outlier refit skipped: {e}",
                    self.iteration
                )),
            }
        }
        self.refits_done += 1;
    }

    /// Label every state of every trajectory without looking at tags
    /// (except in oracle mode, whose entire point is to read them).
    fn decide_labels(
        &mut self,
        trajs: &[Trajectory],
        feats: &[Vec<Vec<f64>>],
    ) -> Result<Vec<Vec<Label>>> {
        let mut all = Vec::with_capacity(trajs.len());
        for (tr, tf) in trajs.iter().zip(feats) {
            let labels = match self.mode {
                TrainMethod::Detector(_) => {
                    let dd = self.detector.as_mut().ok_or_else(|| {
                        Error::InsufficientData(
                            "no detector fitted before post-warmup detection".into(),
                        )
                    })?;
                    tf.iter()
                        .map(|f| dd.double_detect(f))
                        .collect::<Result<Vec<Label>>>()?
                }
                TrainMethod::Random => (0..tr.len())
                    .map(|_| {
                        if self.coin_rng.gen_bool(0.5) {
                            Label::Outlier
                        } else {
                            Label::Inlier
                        }
                    })
                    .collect(),
                TrainMethod::Auto => {
                    let truth =
                        if tr.tag.is_some() { Label::Outlier } else { Label::Inlier };
                    vec![truth; tr.len()]
                }
            };
            all.push(labels);
        }
        Ok(all)
    }

    /// Run one iteration: collect, (post-warmup) detect and route, update.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        if self.iteration >= self.trainer.iterations {
            return Err(Error::InvalidParameter("training already finished".into()));
        }
        let in_warmup = self.iteration < self.warmup_iters;
        let clean_plan;
        let plan: &[Option<OutlierSpec>] = if in_warmup {
            clean_plan = vec![None; self.trainer.n_envs];
            &clean_plan
        } else {
            &self.plan
        };
        let mut trajs = rollout(&mut self.slots, &self.policy, self.trainer.horizon, plan)?;
        let feats: Vec<Vec<Vec<f64>>> = trajs
            .iter()
            .map(|tr| {
                tr.steps
                    .iter()
                    .map(|s| self.policy.features(&s.obs))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let mut completed = Vec::new();
        for tr in &trajs {
            if tr.tag.is_none() {
                completed.extend_from_slice(&tr.completed_returns);
            }
        }
        if !completed.is_empty() {
            self.last_mean_return =
                completed.iter().sum::<f64>() / completed.len() as f64;
        }

        let metrics;
        if in_warmup {
            for (tr, tf) in trajs.iter().zip(&feats) {
                for (step, f) in tr.steps.iter().zip(tf) {
                    self.b_inlier.push(f.clone(), step.action);
                }
            }
            for tr in &mut trajs {
                tr.fill_gae(self.trainer.gamma, self.trainer.lambda)?;
            }
            ppo_update(&mut self.policy, &trajs, &self.trainer, &mut self.update_rng)?;
            if self.iteration + 1 == self.warmup_iters {
                if let TrainMethod::Detector(_) = self.mode {
                    self.fit_pca_from_inliers()?;
                    self.refit_detectors();
                    if self.detector.is_none() {
                        return Err(Error::InsufficientData(
                            "initial detector fit failed at end of warmup".into(),
                        ));
                    }
                }
            }
            metrics = IterationMetrics {
                iteration: self.iteration,
                mean_return: self.last_mean_return,
                det_accuracy: f64::NAN,
                det_f1: f64::NAN,
                retained_fraction: 1.0,
                refits_done: self.refits_done,
            };
        } else {
            let labels = self.decide_labels(&trajs, &feats)?;
            let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
            let mut retained = Vec::new();
            let mut n_states = 0usize;
            for ((mut tr, tf), tl) in trajs.into_iter().zip(feats).zip(&labels) {
                let truly_outlier = tr.tag.is_some();
                for l in tl {
                    match (*l, truly_outlier) {
                        (Label::Outlier, true) => tp += 1,
                        (Label::Outlier, false) => fp += 1,
                        (Label::Inlier, false) => tn += 1,
                        (Label::Inlier, true) => fn_ += 1,
                    }
                }
                n_states += tr.len();
                self.samples_since_refit += tr.len();
                let flagged = flag_trajectory(tl, self.cfg.flag_threshold)?;
                let target =
                    if flagged { &mut self.b_outlier } else { &mut self.b_inlier };
                for (step, f) in tr.steps.iter().zip(tf) {
                    target.push(f, step.action);
                }
                if !flagged {
                    tr.fill_gae(self.trainer.gamma, self.trainer.lambda)?;
                    retained.push(tr);
                }
            }
            let retained_fraction = retained.len() as f64 / self.trainer.n_envs as f64;
            if !retained.is_empty() {
                ppo_update(&mut self.policy, &retained, &self.trainer, &mut self.update_rng)?;
            }
            if let TrainMethod::Detector(_) = self.mode {
                let class_count = self.policy.n_actions();
                if self.samples_since_refit >= class_count * self.cfg.n_c {
                    self.samples_since_refit = 0;
                    self.refit_detectors();
                }
                let since_warmup = self.iteration + 1 - self.warmup_iters;
                if self.cfg.pca_refit_period > 0
                    && self.cfg.k.is_some()
                    && since_warmup.is_multiple_of(self.cfg.pca_refit_period)
                {
                    self.fit_pca_from_inliers()?;
                    self.refit_detectors();
                }
            }
            metrics = IterationMetrics {
                iteration: self.iteration,
                mean_return: self.last_mean_return,
                det_accuracy: (tp + tn) as f64 / n_states as f64,
                det_f1: f1_score(tp, fp, fn_),
                retained_fraction,
                refits_done: self.refits_done,
            };
        }
        self.iteration += 1;
        Ok(metrics)
    }

    /// Run every remaining iteration and collect the per-iteration metrics.
    pub fn run(&mut self) -> Result<Vec<IterationMetrics>> {
        let mut out = Vec::with_capacity(self.trainer.iterations - self.iteration);
        while self.iteration < self.trainer.iterations {
            out.push(self.step()?);
        }
        Ok(out)
    }
}
