//! Generators for three families of anomalous observations: additive
//! Gaussian noise, gradient-sign perturbations aimed at the policy's least
//! likely action, and states streamed from a foreign environment.
//!
//! Every generator is a pure function of its inputs and the supplied RNG
//! stream, so fixed seeds reproduce outputs exactly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numstat::derive_seed;
use crate::toyrl::{EnvKind, SoftmaxPolicy, ToyEnv};

/// Which contamination to apply to an environment's observation stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutlierSpec {
    /// Additive zero-mean Gaussian noise with the given standard deviation.
    Random { std: f64 },
    /// One-step gradient-sign perturbation with budget `epsilon`.
    Adversarial { epsilon: f64 },
    /// Observations drawn from a different environment under random actions.
    Ood { source: EnvKind },
}

impl OutlierSpec {
    pub fn kind_str(&self) -> &'static str {
        match self {
            OutlierSpec::Random { .. } => "random",
            OutlierSpec::Adversarial { .. } => "adversarial",
            OutlierSpec::Ood { .. } => "ood",
        }
    }

    /// Scalar strength for reporting: noise std or attack budget; 0 for the
    /// foreign-environment family, whose "strength" is the source itself.
    pub fn strength(&self) -> f64 {
        match self {
            OutlierSpec::Random { std } => *std,
            OutlierSpec::Adversarial { epsilon } => *epsilon,
            OutlierSpec::Ood { .. } => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OutlierSpec::Random { std } if !(*std > 0.0 && std.is_finite()) => Err(
                Error::InvalidParameter(format!("noise std must be positive, got {std}")),
            ),
            OutlierSpec::Adversarial { epsilon } if !(*epsilon > 0.0 && epsilon.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "attack budget epsilon must be positive, got {epsilon}"
                )))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for OutlierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutlierSpec::Random { std } => write!(f, "random:{std}"),
            OutlierSpec::Adversarial { epsilon } => write!(f, "adversarial:{epsilon}"),
            OutlierSpec::Ood { source } => write!(f, "ood:{source}"),
        }
    }
}

impl FromStr for OutlierSpec {
    type Err = Error;

    /// Parses `random:<std>`, `adversarial:<eps>`, or `ood:<env>`.
    fn from_str(s: &str) -> Result<OutlierSpec> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("outlier spec '{s}' missing ':<arg>'")))?;
        let spec = match kind {
            "random" => OutlierSpec::Random {
                std: arg
                    .parse()
                    .map_err(|_| Error::Config(format!("bad noise std '{arg}'")))?,
            },
            "adversarial" => OutlierSpec::Adversarial {
                epsilon: arg
                    .parse()
                    .map_err(|_| Error::Config(format!("bad attack budget '{arg}'")))?,
            },
            "ood" => OutlierSpec::Ood { source: arg.parse()? },
            other => {
                return Err(Error::Config(format!(
                    "unknown outlier kind '{other}' (expected random, adversarial, or ood)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn clamp_into(mut v: Vec<f64>, bounds: (f64, f64)) -> Vec<f64> {
    for x in &mut v {
        *x = x.clamp(bounds.0, bounds.1);
    }
    v
}

/// Per-coordinate additive Gaussian noise, clamped to the observation range.
pub fn gaussian_noise(
    state: &[f64],
    std: f64,
    bounds: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise std must be positive, got {std}"
        )));
    }
    let noisy = state
        .iter()
        .map(|&x| x + std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(clamp_into(noisy, bounds))
}

/// The policy's least likely action and its one-hot target distribution.
#[derive(Clone, Debug)]
pub struct AdversarialTarget {
    pub action: usize,
    pub onehot: Vec<f64>,
}

/// Arg-min of the action probabilities; ties go to the smallest action id.
pub fn worst_action(policy: &SoftmaxPolicy, state: &[f64]) -> Result<AdversarialTarget> {
    let probs = policy.forward(state)?.probs;
    let mut action = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p < probs[action] {
            action = a;
        }
    }
    let mut onehot = vec![0.0; probs.len()];
    onehot[action] = 1.0;
    Ok(AdversarialTarget { action, onehot })
}

fn grad_sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One gradient-sign step that pushes the state toward the policy's least
/// likely action: s' = clamp(s - eps * sign(grad_s J)) with
/// J = -log pi(worst | s). Coordinates with zero gradient are untouched, so
/// the perturbation always stays inside the eps-ball in the max norm.
pub fn fgsm_perturb(
    policy: &SoftmaxPolicy,
    state: &[f64],
    epsilon: f64,
    bounds: (f64, f64),
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "attack budget epsilon must be positive, got {epsilon}"
        )));
    }
    let target = worst_action(policy, state)?;
    let grad = policy.grad_state(state, &target.onehot)?;
    let perturbed = state
        .iter()
        .zip(&grad)
        .map(|(&x, &g)| x - epsilon * grad_sign(g))
        .collect();
    Ok(clamp_into(perturbed, bounds))
}

/// Zero-pad or truncate a vector to the target dimension.
pub fn encode_dim(v: &[f64], target_dim: usize) -> Result<Vec<f64>> {
    if target_dim == 0 {
        return Err(Error::InvalidParameter(
            "cannot re-encode to zero dimensions".into(),
        ));
    }
    let mut out = v.to_vec();
    out.resize(target_dim, 0.0);
    Ok(out)
}

/// One transition of the foreign stream, already re-encoded.
#[derive(Clone, Debug)]
pub struct OodStep {
    /// Observation the transition departed from (target-dimension encoding).
    pub obs: Vec<f64>,
    /// Action taken in the *source* action space.
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// Streams transitions from a source environment driven by uniformly random
/// actions, re-encoding observations to the target dimension.
#[derive(Clone, Debug)]
pub struct OodSampler {
    env: ToyEnv,
    current: Vec<f64>,
    rng: ChaCha8Rng,
    target_dim: usize,
}

impl OodSampler {
    pub fn new(source: EnvKind, target_dim: usize, seed: u64) -> Result<OodSampler> {
        use rand::SeedableRng;
        let mut env = ToyEnv::new(source, derive_seed(seed, 0));
        let current = encode_dim(&env.reset(), target_dim)?;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        Ok(OodSampler { env, current, rng, target_dim })
    }

    pub fn source(&self) -> EnvKind {
        self.env.kind()
    }

    /// Observation the next transition will depart from.
    pub fn peek(&self) -> &[f64] {
        &self.current
    }

    pub fn next_transition(&mut self) -> Result<OodStep> {
        let action = self.rng.gen_range(0..self.env.n_actions());
        let out = self.env.step(action)?;
        let step = OodStep {
            obs: std::mem::take(&mut self.current),
            action,
            reward: out.reward,
            done: out.done,
        };
        let next = if out.done { self.env.reset() } else { out.obs };
        self.current = encode_dim(&next, self.target_dim)?;
        Ok(step)
    }

    /// Just the state stream, for callers that only need observations.
    pub fn next_state(&mut self) -> Result<Vec<f64>> {
        Ok(self.next_transition()?.obs)
    }
}
