use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Rng;

pub const LINE_GOAL: f64 = 0.8;
pub const LINE_BAND: f64 = 0.05;
pub const LINE_STEP: f64 = 0.2;

pub const TWO_GOAL_STEP: f64 = 0.15;
pub const GOAL_RADIUS: f64 = 0.1;
pub const GOAL_HIGH: [f64; 2] = [0.8, 0.8];
pub const GOAL_LOW: [f64; 2] = [-0.8, 0.8];
pub const REWARD_HIGH: f64 = 1.0;
pub const REWARD_LOW: f64 = 0.3;

pub const BANDIT_HIGH_MODE: f64 = 0.7;
pub const BANDIT_LOW_MODE: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    LineReach,
    TwoGoal,
    BanditBimodal,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::LineReach, EnvId::TwoGoal, EnvId::BanditBimodal];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::LineReach => "line-reach",
            EnvId::TwoGoal => "two-goal",
            EnvId::BanditBimodal => "bandit-bimodal",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: [f64; 2],
    pub reward: f64,
    pub terminal: bool,
}

/// Static description of one of the built-in environments.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub gamma_default: f64,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        let (state_dim, action_dim, horizon) = match id {
            EnvId::LineReach => (1, 1, 20),
            EnvId::TwoGoal => (2, 2, 30),
            EnvId::BanditBimodal => (1, 1, 1),
        };
        EnvSpec {
            id,
            state_dim,
            action_dim,
            horizon,
            gamma_default: 0.99,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        match self.id {
            EnvId::LineReach => vec![-1.0],
            EnvId::TwoGoal => vec![rng.uniform_range(-0.1, 0.1), rng.uniform_range(-0.1, 0.1)],
            EnvId::BanditBimodal => vec![0.0],
        }
    }

    /// One transition. Actions are clipped to `[-1, 1]` here regardless of
    /// what the caller did.
    pub fn step(&self, s: &[f64], a: &[f64]) -> StepOutcome {
        let clip = |x: f64| x.clamp(-1.0, 1.0);
        match self.id {
            EnvId::LineReach => {
                let next = clip(s[0] + LINE_STEP * clip(a[0]));
                let (reward, terminal) = self.arrival(&[next]);
                StepOutcome {
                    next_state: [next, 0.0],
                    reward,
                    terminal,
                }
            }
            EnvId::TwoGoal => {
                let next = [
                    clip(s[0] + TWO_GOAL_STEP * clip(a[0])),
                    clip(s[1] + TWO_GOAL_STEP * clip(a[1])),
                ];
                let (reward, terminal) = self.arrival(&next);
                StepOutcome {
                    next_state: next,
                    reward,
                    terminal,
                }
            }
            EnvId::BanditBimodal => StepOutcome {
                next_state: [0.0, 0.0],
                reward: bandit_reward(clip(a[0])),
                terminal: true,
            },
        }
    }

    /// Reward and termination for arriving at `next` (goal environments only).
    pub fn arrival(&self, next: &[f64]) -> (f64, bool) {
        match self.id {
            EnvId::LineReach => {
                if (next[0] - LINE_GOAL).abs() <= LINE_BAND {
                    (1.0, true)
                } else {
                    (0.0, false)
                }
            }
            EnvId::TwoGoal => {
                let dist = |g: [f64; 2]| ((next[0] - g[0]).powi(2) + (next[1] - g[1]).powi(2)).sqrt();
                if dist(GOAL_HIGH) <= GOAL_RADIUS {
                    (REWARD_HIGH, true)
                } else if dist(GOAL_LOW) <= GOAL_RADIUS {
                    (REWARD_LOW, true)
                } else {
                    (0.0, false)
                }
            }
            EnvId::BanditBimodal => (0.0, true),
        }
    }

    /// Per-dimension displacement of a unit action.
    pub fn move_scale(&self) -> f64 {
        match self.id {
            EnvId::LineReach => LINE_STEP,
            EnvId::TwoGoal => TWO_GOAL_STEP,
            EnvId::BanditBimodal => 0.0,
        }
    }
}

/// Two Gaussian bumps: height 1 at 0.7 and 0.4 at −0.5, both with `2σ² = 0.02`.
pub fn bandit_reward(a: f64) -> f64 {
    (-(a - BANDIT_HIGH_MODE).powi(2) / 0.02).exp()
        + 0.4 * (-(a - BANDIT_LOW_MODE).powi(2) / 0.02).exp()
}
