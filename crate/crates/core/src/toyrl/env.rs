//! Two pocket-sized control tasks with deterministic dynamics, stochastic
//! observation jitter, and optimal returns computable by exact dynamic
//! programming. The two use different observation encodings and dimensions,
//! so each can serve as an out-of-distribution source for the other.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Clamping range for (possibly perturbed) observations. Clean observations
/// stay well inside it.
pub const OBS_LO: f64 = -1.0;
pub const OBS_HI: f64 = 2.0;

const STEP_COST: f64 = 0.01;
const SHAPING: f64 = 0.05;
const GOAL_REWARD: f64 = 1.0;
const JITTER: f64 = 0.03;

const GRID_SIDE: usize = 5;
const CHAIN_LEN: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    /// 5x5 grid walk: 25-dim scaled one-hot observation, 4 moves, horizon 40.
    Grid,
    /// 12-cell chain: 24-dim thermometer observation, 3 actions, horizon 24.
    Chain,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::Grid, EnvKind::Chain];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::Grid => "grid",
            EnvKind::Chain => "chain",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvKind::Grid => GRID_SIDE * GRID_SIDE,
            EnvKind::Chain => 2 * CHAIN_LEN,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvKind::Grid => 4,
            EnvKind::Chain => 3,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvKind::Grid => 40,
            EnvKind::Chain => 24,
        }
    }

    fn n_cells(&self) -> usize {
        match self {
            EnvKind::Grid => GRID_SIDE * GRID_SIDE,
            EnvKind::Chain => CHAIN_LEN,
        }
    }

    fn start(&self) -> usize {
        0
    }

    fn goal(&self) -> usize {
        self.n_cells() - 1
    }

    fn transition(&self, pos: usize, action: usize) -> usize {
        match self {
            EnvKind::Grid => {
                let (r, c) = (pos / GRID_SIDE, pos % GRID_SIDE);
                let (r, c) = match action {
                    0 => (r.saturating_sub(1), c),
                    1 => ((r + 1).min(GRID_SIDE - 1), c),
                    2 => (r, c.saturating_sub(1)),
                    _ => (r, (c + 1).min(GRID_SIDE - 1)),
                };
                r * GRID_SIDE + c
            }
            EnvKind::Chain => match action {
                0 => pos.saturating_sub(1),
                1 => (pos + 1).min(CHAIN_LEN - 1),
                _ => pos,
            },
        }
    }

    /// Distance to the goal in steps (Manhattan on the grid, linear on the
    /// chain); drives the potential-based shaping term.
    fn dist(&self, pos: usize) -> usize {
        match self {
            EnvKind::Grid => {
                let (r, c) = (pos / GRID_SIDE, pos % GRID_SIDE);
                (GRID_SIDE - 1 - r) + (GRID_SIDE - 1 - c)
            }
            EnvKind::Chain => CHAIN_LEN - 1 - pos,
        }
    }

    fn reward(&self, pos: usize, next: usize) -> (f64, bool) {
        let reached = next == self.goal();
        let shaped = SHAPING * (self.dist(pos) as f64 - self.dist(next) as f64);
        let bonus = if reached { GOAL_REWARD } else { 0.0 };
        (-STEP_COST + shaped + bonus, reached)
    }

    fn base_obs(&self, pos: usize) -> Vec<f64> {
        match self {
            EnvKind::Grid => {
                let mut obs = vec![0.0; self.obs_dim()];
                obs[pos] = 0.8;
                obs
            }
            EnvKind::Chain => {
                let mut obs = vec![0.0; self.obs_dim()];
                for i in 0..CHAIN_LEN {
                    if i <= pos {
                        obs[i] = 0.7;
                    }
                    if i >= pos {
                        obs[CHAIN_LEN + i] = 0.7;
                    }
                }
                obs
            }
        }
    }

    /// Exact optimal undiscounted return from the start state, by backward
    /// induction over (cell, step) pairs.
    pub fn optimal_return(&self) -> f64 {
        let cells = self.n_cells();
        let horizon = self.horizon();
        // v[pos] = best return-to-go from `pos` with t steps already taken.
        let mut v_next = vec![0.0; cells];
        for t in (0..horizon).rev() {
            let mut v = vec![f64::NEG_INFINITY; cells];
            for pos in 0..cells {
                for a in 0..self.n_actions() {
                    let next = self.transition(pos, a);
                    let (r, reached) = self.reward(pos, next);
                    let cont =
                        if reached || t + 1 == horizon { 0.0 } else { v_next[next] };
                    if r + cont > v[pos] {
                        v[pos] = r + cont;
                    }
                }
            }
            v_next = v;
        }
        v_next[self.start()]
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<EnvKind> {
        match s {
            "grid" => Ok(EnvKind::Grid),
            "chain" => Ok(EnvKind::Chain),
            other => Err(Error::Config(format!(
                "unknown environment '{other}' (expected grid or chain)"
            ))),
        }
    }
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A running instance of one task. Dynamics are a deterministic function of
/// the action sequence; only the observation jitter consumes randomness, so
/// a fixed (seed, action sequence) pair reproduces observations exactly.
#[derive(Clone, Debug)]
pub struct ToyEnv {
    kind: EnvKind,
    pos: usize,
    t: usize,
    rng: ChaCha8Rng,
}

impl ToyEnv {
    pub fn new(kind: EnvKind, seed: u64) -> ToyEnv {
        ToyEnv { kind, pos: kind.start(), t: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.kind.n_actions()
    }

    pub fn horizon(&self) -> usize {
        self.kind.horizon()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (OBS_LO, OBS_HI)
    }

    pub fn optimal_return(&self) -> f64 {
        self.kind.optimal_return()
    }

    fn observe(&mut self) -> Vec<f64> {
        let mut obs = self.kind.base_obs(self.pos);
        for v in &mut obs {
            *v += self.rng.gen_range(-JITTER..=JITTER);
        }
        obs
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.pos = self.kind.start();
        self.t = 0;
        self.observe()
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= self.n_actions() {
            return Err(Error::InvalidParameter(format!(
                "action {action} out of range for {} ({} actions)",
                self.kind,
                self.n_actions()
            )));
        }
        let next = self.kind.transition(self.pos, action);
        let (reward, reached) = self.kind.reward(self.pos, next);
        self.pos = next;
        self.t += 1;
        let done = reached || self.t >= self.kind.horizon();
        Ok(StepOutcome { obs: self.observe(), reward, done })
    }
}
