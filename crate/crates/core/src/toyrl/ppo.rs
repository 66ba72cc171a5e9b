//! Generalized advantage estimation and PPO-clip updates.
//!
//! The optimizer is plain fixed-step gradient descent on
//! `-min(r*A, clip(r)*A) + c_v * 0.5 * (v - R)^2`; no adaptive state, so a
//! seed pins the whole training run.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numstat::derive_seed;
use crate::toyrl::env::EnvKind;
use crate::toyrl::policy::{Gradients, SoftmaxPolicy};
use crate::toyrl::rollout::{rollout, EnvSlot, Trajectory};

#[derive(Clone, Debug)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub hidden: usize,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> TrainerConfig {
        TrainerConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 0.08,
            epochs: 4,
            minibatch: 256,
            n_envs: 8,
            horizon: 128,
            iterations: 200,
            hidden: 64,
            value_coef: 0.5,
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "clip must lie in (0, 1), got {}",
                self.clip
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be nonnegative, got {}",
                self.lr
            )));
        }
        if self.minibatch == 0 || self.epochs == 0 || self.n_envs == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter(
                "minibatch, epochs, n_envs, and horizon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Generalized advantage estimates. `bootstrap` is the value of the state
/// after the last step; `dones[t]` cuts both the bootstrap and the
/// accumulation at episode boundaries.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let t_max = rewards.len();
    if values.len() != t_max || dones.len() != t_max {
        return Err(Error::DimMismatch { expected: t_max, got: values.len().min(dones.len()) });
    }
    let mut advantages = vec![0.0; t_max];
    let mut acc = 0.0;
    let mut v_next = bootstrap;
    for t in (0..t_max).rev() {
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * v_next * nonterminal - values[t];
        acc = delta + gamma * lambda * nonterminal * acc;
        advantages[t] = acc;
        v_next = values[t];
    }
    Ok(advantages)
}

/// Aggregate statistics over one `ppo_update` call.
#[derive(Clone, Copy, Debug)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Fraction of sample passes where the clipped branch was strictly active.
    pub clip_fraction: f64,
    pub n_samples: usize,
}

struct FlatSample<'a> {
    obs: &'a [f64],
    action: usize,
    old_logp: f64,
    advantage: f64,
    ret: f64,
}

/// One flattened training sample for direct objective evaluation.
#[derive(Clone, Debug)]
pub struct PpoSample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub old_logp: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Mean clipped objective (policy part plus weighted value part) over a
/// batch at fixed parameters.
pub fn ppo_loss(
    policy: &SoftmaxPolicy,
    samples: &[PpoSample],
    clip: f64,
    value_coef: f64,
) -> Result<f64> {
    ppo_loss_grad(policy, samples, clip, value_coef).map(|(loss, _)| loss)
}

/// Mean clipped objective and its gradient in `flat_params` order.
pub fn ppo_loss_grad(
    policy: &SoftmaxPolicy,
    samples: &[PpoSample],
    clip: f64,
    value_coef: f64,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let borrowed: Vec<FlatSample<'_>> = samples
        .iter()
        .map(|s| FlatSample {
            obs: &s.obs,
            action: s.action,
            old_logp: s.old_logp,
            advantage: s.advantage,
            ret: s.ret,
        })
        .collect();
    let (total, _, _, _, grads) = minibatch_loss_grad(policy, &borrowed, clip, value_coef)?;
    Ok((total, grads.to_flat()))
}

/// Mean loss and gradients over a minibatch at fixed parameters.
/// Returns (total loss, policy part, value part, strictly clipped count).
fn minibatch_loss_grad(
    policy: &SoftmaxPolicy,
    samples: &[FlatSample<'_>],
    clip: f64,
    value_coef: f64,
) -> Result<(f64, f64, f64, usize, Gradients)> {
    let mut grads = Gradients::zeros(policy);
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut clipped = 0;
    for s in samples {
        let fwd = policy.forward(s.obs)?;
        let logp = fwd.probs[s.action].ln();
        let ratio = (logp - s.old_logp).exp();
        let surr_raw = ratio * s.advantage;
        let surr_clip = ratio.clamp(1.0 - clip, 1.0 + clip) * s.advantage;
        policy_loss -= surr_raw.min(surr_clip);
        // Gradient passes through only when the raw surrogate attains the min.
        let g_logp = if surr_raw <= surr_clip { -ratio * s.advantage } else { 0.0 };
        if surr_clip < surr_raw {
            clipped += 1;
        }
        let mut g_logits = Vec::with_capacity(fwd.probs.len());
        for (a, &p) in fwd.probs.iter().enumerate() {
            let indicator = if a == s.action { 1.0 } else { 0.0 };
            g_logits.push(g_logp * (indicator - p));
        }
        let v_err = fwd.value - s.ret;
        value_loss += 0.5 * v_err * v_err;
        let g_value = value_coef * v_err;
        policy.accumulate_grads(s.obs, &fwd, &g_logits, g_value, &mut grads);
    }
    let m = samples.len() as f64;
    grads.scale(1.0 / m);
    policy_loss /= m;
    value_loss /= m;
    let total = policy_loss + value_coef * value_loss;
    if !total.is_finite() {
        return Err(Error::NonFinite("ppo loss"));
    }
    Ok((total, policy_loss, value_loss, clipped, grads))
}

/// One PPO update over a batch of trajectories with filled advantages.
/// Minibatch order is drawn from `rng`, so the caller's seed fixes the run.
pub fn ppo_update(
    policy: &mut SoftmaxPolicy,
    trajectories: &[Trajectory],
    cfg: &TrainerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossStats> {
    cfg.validate()?;
    if trajectories.is_empty() {
        return Err(Error::EmptySample);
    }
    for tr in trajectories {
        if tr.advantages.len() != tr.steps.len() || tr.returns.len() != tr.steps.len() {
            return Err(Error::InsufficientData(
                "trajectory advantages missing; fill_gae must run before ppo_update".into(),
            ));
        }
    }
    let mut samples = Vec::new();
    for tr in trajectories {
        for (t, step) in tr.steps.iter().enumerate() {
            samples.push(FlatSample {
                obs: &step.obs,
                action: step.action,
                old_logp: step.logp,
                advantage: tr.advantages[t],
                ret: tr.returns[t],
            });
        }
    }
    if cfg.normalize_advantages {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for s in &mut samples {
            s.advantage = (s.advantage - mean) / std;
        }
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let (mut ploss_sum, mut vloss_sum) = (0.0, 0.0);
    let (mut clipped_total, mut passes, mut batches) = (0usize, 0usize, 0usize);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mb: Vec<FlatSample<'_>> = chunk
                .iter()
                .map(|&i| {
                    let s = &samples[i];
                    FlatSample {
                        obs: s.obs,
                        action: s.action,
                        old_logp: s.old_logp,
                        advantage: s.advantage,
                        ret: s.ret,
                    }
                })
                .collect();
            let (_, ploss, vloss, clipped, grads) =
                minibatch_loss_grad(policy, &mb, cfg.clip, cfg.value_coef)?;
            policy.apply_step(&grads, cfg.lr);
            ploss_sum += ploss;
            vloss_sum += vloss;
            clipped_total += clipped;
            passes += mb.len();
            batches += 1;
        }
    }
    Ok(LossStats {
        policy_loss: ploss_sum / batches as f64,
        value_loss: vloss_sum / batches as f64,
        clip_fraction: clipped_total as f64 / passes as f64,
        n_samples: samples.len(),
    })
}

/// Outcome of a full clean training run.
pub struct TrainOutcome {
    pub policy: SoftmaxPolicy,
    /// Mean completed-episode return per iteration.
    pub mean_returns: Vec<f64>,
}

/// Train a fresh policy on a clean environment set for `cfg.iterations`
/// PPO iterations of `n_envs * horizon` steps each.
pub fn train_policy(kind: EnvKind, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut policy =
        SoftmaxPolicy::new(kind.obs_dim(), cfg.hidden, kind.n_actions(), derive_seed(cfg.seed, 100));
    let mut slots: Vec<EnvSlot> =
        (0..cfg.n_envs).map(|i| EnvSlot::new(kind, cfg.seed, i)).collect();
    let plan = vec![None; cfg.n_envs];
    let mut update_rng = {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 101))
    };
    let mut mean_returns = Vec::with_capacity(cfg.iterations);
    let mut last_mean = 0.0;
    for _ in 0..cfg.iterations {
        let mut trajs = rollout(&mut slots, &policy, cfg.horizon, &plan)?;
        let mut completed = Vec::new();
        for tr in &mut trajs {
            tr.fill_gae(cfg.gamma, cfg.lambda)?;
            completed.extend_from_slice(&tr.completed_returns);
        }
        if !completed.is_empty() {
            last_mean = completed.iter().sum::<f64>() / completed.len() as f64;
        }
        mean_returns.push(last_mean);
        ppo_update(&mut policy, &trajs, cfg, &mut update_rng)?;
    }
    Ok(TrainOutcome { policy, mean_returns })
}
