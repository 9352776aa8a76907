//! Policy evaluation by environment rollouts.

use serde::{Deserialize, Serialize};

use crate::actor::Actor;
use crate::env::{episodic_oracle, normalize_score, EnvSpec, Greedy, Normalizer};
use crate::error::Result;
use crate::flow::FlowPolicy;
use crate::kernel::{Matrix, Rng};

/// Offset separating evaluation streams from training streams.
pub const EVAL_STREAM_BASE: u64 = 0x4556_0000_0000;

/// Something that maps raw environment states to actions.
pub trait Policy: Sync {
    /// One action per row of `states`; row `i` may draw noise from `rngs[i]`.
    fn act(&self, states: &Matrix, rngs: &mut [Rng]) -> Result<Matrix>;
}

fn noise(rngs: &mut [Rng], d: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rngs.len() * d);
    for r in rngs.iter_mut() {
        data.extend(r.standard_normal(d));
    }
    Matrix::from_vec(rngs.len(), d, data)
}

/// The one-step actor acting on normalized states with fresh noise.
pub struct ActorPolicy<'a> {
    pub actor: &'a Actor,
    pub normalizer: &'a Normalizer,
}

impl Policy for ActorPolicy<'_> {
    fn act(&self, states: &Matrix, rngs: &mut [Rng]) -> Result<Matrix> {
        let z = noise(rngs, self.actor.action_dim)?;
        self.actor.sample(&self.normalizer.apply_rows(states), &z)
    }
}

/// The flow policy, sampled by Euler integration.
pub struct FlowSampler<'a> {
    pub flow: &'a FlowPolicy,
    pub normalizer: &'a Normalizer,
}

impl Policy for FlowSampler<'_> {
    fn act(&self, states: &Matrix, rngs: &mut [Rng]) -> Result<Matrix> {
        let z = noise(rngs, self.flow.action_dim)?;
        self.flow.integrate(&self.normalizer.apply_rows(states), &z)
    }
}

pub struct GreedyPolicy(pub Greedy);

impl Policy for GreedyPolicy {
    fn act(&self, states: &Matrix, _rngs: &mut [Rng]) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = (0..states.rows()).map(|i| self.0.action(states.row(i))).collect();
        Matrix::from_rows(&rows)
    }
}

pub struct UniformPolicy {
    pub action_dim: usize,
}

impl Policy for UniformPolicy {
    fn act(&self, states: &Matrix, rngs: &mut [Rng]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(states.rows() * self.action_dim);
        for r in rngs.iter_mut() {
            for _ in 0..self.action_dim {
                data.push(r.uniform_range(-1.0, 1.0));
            }
        }
        Matrix::from_vec(states.rows(), self.action_dim, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_error: f64,
    pub normalized_score: f64,
}

/// Undiscounted returns of `episodes` rollouts, all advanced in lockstep.
/// Episode `i` uses its own generator `Rng::new(seed, EVAL_STREAM_BASE + i)`
/// for both its start state and its policy noise.
pub fn rollout_returns(policy: &dyn Policy, env: &EnvSpec, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rngs: Vec<Rng> = (0..episodes)
        .map(|i| Rng::new(seed, EVAL_STREAM_BASE + i as u64))
        .collect();
    let mut states: Vec<Vec<f64>> = rngs.iter_mut().map(|r| env.reset(r)).collect();
    let mut returns = vec![0.0; episodes];
    let mut active: Vec<usize> = (0..episodes).collect();
    for _ in 0..env.horizon {
        if active.is_empty() {
            break;
        }
        let rows: Vec<Vec<f64>> = active.iter().map(|&i| states[i].clone()).collect();
        let batch = Matrix::from_rows(&rows)?;
        let mut batch_rngs: Vec<Rng> = active.iter().map(|&i| rngs[i].clone()).collect();
        let actions = policy.act(&batch, &mut batch_rngs)?;
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            rngs[i] = batch_rngs[k].clone();
            let o = env.step(&states[i], actions.row(k));
            returns[i] += o.reward;
            if !o.terminal {
                states[i] = o.next_state[..env.state_dim].to_vec();
                still.push(i);
            }
        }
        active = still;
    }
    Ok(returns)
}

pub fn evaluate_policy(policy: &dyn Policy, env: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalResult> {
    let returns = rollout_returns(policy, env, episodes, seed)?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let oracle = episodic_oracle(env)?;
    Ok(EvalResult {
        episodes,
        mean_return: mean,
        std_error: (var / n).sqrt(),
        normalized_score: normalize_score(mean, &oracle)?,
    })
}
