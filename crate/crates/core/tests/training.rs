//! End-to-end check that the PPO stack learns the toy tasks: the policy must
//! reach at least 90% of the exactly known optimal mean return within a
//! 200k-step budget, and training must be reproducible from the seed.

use statewatch::toyrl::{train_policy, EnvKind, TrainerConfig};

#[test]
fn ppo_reaches_ninety_percent_of_optimal_within_budget() {
    // 195 iterations * 8 envs * 128 steps = 199,680 environment steps.
    let cfg = TrainerConfig { iterations: 195, seed: 0, ..TrainerConfig::default() };
    assert!(cfg.iterations * cfg.n_envs * cfg.horizon <= 200_000);
    let out = train_policy(EnvKind::Grid, &cfg).unwrap();
    let tail = &out.mean_returns[out.mean_returns.len() - 10..];
    let final_mean: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
    let optimal = EnvKind::Grid.optimal_return();
    assert!(
        final_mean >= 0.9 * optimal,
        "final mean return {final_mean:.4} below 90% of optimal {optimal:.4}"
    );
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let cfg = TrainerConfig { iterations: 8, seed: 42, ..TrainerConfig::default() };
    let a = train_policy(EnvKind::Chain, &cfg).unwrap();
    let b = train_policy(EnvKind::Chain, &cfg).unwrap();
    assert_eq!(a.mean_returns, b.mean_returns);
    let pa = a.policy.flat_params();
    let pb = b.policy.flat_params();
    assert_eq!(pa.len(), pb.len());
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
