//! Fixed-length segment collection across a set of environment slots, with
//! optional per-slot observation contamination.
//!
//! Each slot owns RNG streams derived from (master seed, slot index), so the
//! collected trajectories are identical whether slots run serially or in
//! parallel, and across reruns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numstat::derive_seed;
use crate::outliers::{fgsm_perturb, gaussian_noise, OodSampler, OutlierSpec};
use crate::toyrl::env::{EnvKind, ToyEnv, OBS_HI, OBS_LO};
use crate::toyrl::policy::SoftmaxPolicy;
use crate::toyrl::ppo::gae;

/// One collected step. `obs` is the observation the action was chosen on —
/// for contaminated slots that is the perturbed or foreign observation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Log-probability of `action` under the collecting policy, evaluated
    /// on `obs`.
    pub logp: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// A fixed-length segment from one slot, plus derived training quantities.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub env_index: usize,
    /// Ground-truth contamination marker; `None` for a clean slot. Consumed
    /// by metrics and oracle baselines only.
    pub tag: Option<OutlierSpec>,
    pub steps: Vec<StepRecord>,
    /// Value estimate of the state following the last step.
    pub final_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Returns of episodes that finished inside this segment.
    pub completed_returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Compute advantages and value targets in place.
    pub fn fill_gae(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        let dones: Vec<bool> = self.steps.iter().map(|s| s.done).collect();
        let adv = gae(&rewards, &values, &dones, self.final_value, gamma, lambda)?;
        self.returns = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
        self.advantages = adv;
        Ok(())
    }
}

/// A persistent environment instance with its own RNG streams. Episodes
/// continue across rollout calls; resets happen on episode end only.
#[derive(Clone, Debug)]
pub struct EnvSlot {
    env: ToyEnv,
    obs: Vec<f64>,
    rng: ChaCha8Rng,
    ood: Option<OodSampler>,
    episode_return: f64,
}

impl EnvSlot {
    pub fn new(kind: EnvKind, master_seed: u64, index: usize) -> EnvSlot {
        let mut env = ToyEnv::new(kind, derive_seed(master_seed, 2 * index as u64));
        let obs = env.reset();
        EnvSlot {
            env,
            obs,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(master_seed, 2 * index as u64 + 1)),
            ood: None,
            episode_return: 0.0,
        }
    }

    fn ensure_ood_sampler(&mut self, source: EnvKind, target_dim: usize) -> Result<()> {
        if self.ood.as_ref().map(|s| s.source()) != Some(source) {
            let seed = self.rng.gen();
            self.ood = Some(OodSampler::new(source, target_dim, seed)?);
        }
        Ok(())
    }
}

/// Collect `horizon` steps from every slot. `plan[i]` selects the
/// contamination applied to slot `i`'s observation stream:
///
/// - noise / gradient attack: the perturbed observation is stored, the
///   action is sampled on it, and the underlying environment advances as
///   usual, so the perturbation corrupts what the learner sees, not the
///   dynamics;
/// - foreign source: the slot streams transitions of the source environment
///   under its own uniformly random actions (re-encoded observations, source
///   rewards, source episode boundaries), with the action mapped into the
///   target action space and the log-probability taken from the collecting
///   policy.
pub fn rollout(
    slots: &mut [EnvSlot],
    policy: &SoftmaxPolicy,
    horizon: usize,
    plan: &[Option<OutlierSpec>],
) -> Result<Vec<Trajectory>> {
    if plan.len() != slots.len() {
        return Err(Error::DimMismatch { expected: slots.len(), got: plan.len() });
    }
    if slots.is_empty() || horizon == 0 {
        return Err(Error::EmptySample);
    }
    let mut out = Vec::with_capacity(slots.len());
    for (i, slot) in slots.iter_mut().enumerate() {
        let spec = plan[i];
        let mut steps = Vec::with_capacity(horizon);
        let mut completed = Vec::new();
        let final_value;
        if let Some(OutlierSpec::Ood { source }) = spec {
            slot.ensure_ood_sampler(source, policy.obs_dim())?;
            let mut sampler = slot.ood.take().expect("sampler just ensured");
            for _ in 0..horizon {
                let tr = sampler.next_transition()?;
                let fwd = policy.forward(&tr.obs)?;
                let action = tr.action % policy.n_actions();
                let logp = fwd.probs[action].ln();
                slot.episode_return += tr.reward;
                if tr.done {
                    completed.push(std::mem::take(&mut slot.episode_return));
                }
                steps.push(StepRecord {
                    obs: tr.obs,
                    action,
                    logp,
                    reward: tr.reward,
                    value: fwd.value,
                    done: tr.done,
                });
            }
            final_value = policy.forward(sampler.peek())?.value;
            slot.ood = Some(sampler);
        } else {
            for _ in 0..horizon {
                let stored = match spec {
                    None => slot.obs.clone(),
                    Some(OutlierSpec::Random { std }) => {
                        gaussian_noise(&slot.obs, std, (OBS_LO, OBS_HI), &mut slot.rng)?
                    }
                    Some(OutlierSpec::Adversarial { epsilon }) => {
                        fgsm_perturb(policy, &slot.obs, epsilon, (OBS_LO, OBS_HI))?
                    }
                    Some(OutlierSpec::Ood { .. }) => unreachable!(),
                };
                let fwd = policy.forward(&stored)?;
                let action = SoftmaxPolicy::sample_action(&fwd.probs, &mut slot.rng);
                let logp = fwd.probs[action].ln();
                let outcome = slot.env.step(action)?;
                slot.episode_return += outcome.reward;
                if outcome.done {
                    completed.push(std::mem::take(&mut slot.episode_return));
                    slot.obs = slot.env.reset();
                } else {
                    slot.obs = outcome.obs;
                }
                steps.push(StepRecord {
                    obs: stored,
                    action,
                    logp,
                    reward: outcome.reward,
                    value: fwd.value,
                    done: outcome.done,
                });
            }
            final_value = policy.forward(&slot.obs)?.value;
        }
        out.push(Trajectory {
            env_index: i,
            tag: spec,
            steps,
            final_value,
            advantages: Vec::new(),
            returns: Vec::new(),
            completed_returns: completed,
        });
    }
    Ok(out)
}
