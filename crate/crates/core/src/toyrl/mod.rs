//! Desk-scale reinforcement-learning stack: two small environments with
//! known optimal returns, a differentiable softmax policy whose hidden
//! activation doubles as the detection feature, PPO-clip training, rollout
//! collection with optional observation contamination, and a line-oriented
//! trajectory dump format.

pub mod env;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod trajio;

pub use env::{EnvKind, StepOutcome, ToyEnv, OBS_HI, OBS_LO};
pub use policy::{Forward, SoftmaxPolicy};
pub use ppo::{
    gae, ppo_loss, ppo_loss_grad, ppo_update, train_policy, LossStats, PpoSample,
    TrainOutcome, TrainerConfig,
};
pub use rollout::{rollout, EnvSlot, StepRecord, Trajectory};
pub use trajio::{dump_trajectories, load_trajectories};
