//! One-step actor distilled from the flow policy, the Q-scale normalizer, and
//! the value-aware guidance weights.

use serde::{Deserialize, Serialize};

use crate::critic::{Critic, QPair};
use crate::error::{Error, Result};
use crate::kernel::{adam_step, sigmoid, AdamState, Matrix, Mlp, MlpCache, MlpSpec, ParamSet, Rng};

pub const DEFAULT_AWR_CLIP: f64 = 100.0;
pub const DEFAULT_LAMBDA_FLOOR: f64 = 1e-6;
pub const DEFAULT_DELTAS: [f64; 5] = [0.01, 0.1, 0.25, 0.5, 0.75];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    Softmax,
    Awr,
    Min,
    /// Unit weights: plain flow-matching BC with a Q-guided actor.
    None,
    /// Unit weights and no Q term in the actor loss.
    BcOnly,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::Softmax => "softmax",
            GuidanceMode::Awr => "awr",
            GuidanceMode::Min => "min",
            GuidanceMode::None => "none",
            GuidanceMode::BcOnly => "bc-only",
        }
    }

    /// Whether the actor objective includes the `−λQ` term.
    pub fn uses_q(self) -> bool {
        self != GuidanceMode::BcOnly
    }
}

/// `1 / max(mean |q|, floor)`.
pub fn lambda_scale(q: &[f64], floor: f64) -> f64 {
    1.0 / mean_abs(q).max(floor)
}

pub fn mean_abs(q: &[f64]) -> f64 {
    q.iter().map(|v| v.abs()).sum::<f64>() / q.len() as f64
}

/// `σ(λ·(q_data − q_actor)/η)`: the two-way softmax between the data action
/// and the actor's proposal, in logistic form.
#[inline]
pub fn guidance_softmax(q_data: f64, q_actor: f64, lambda: f64, eta: f64) -> f64 {
    sigmoid(lambda * (q_data - q_actor) / eta)
}

/// `min(exp(λ·(q_data − q_actor)/η), clip)`.
#[inline]
pub fn guidance_awr(q_data: f64, q_actor: f64, lambda: f64, eta: f64, clip: f64) -> f64 {
    (lambda * (q_data - q_actor) / eta).exp().min(clip)
}

/// Softmax guidance against the weaker of the actor and flow proposals.
#[inline]
pub fn guidance_min(q_data: f64, q_actor: f64, q_flow: f64, lambda: f64, eta: f64) -> f64 {
    sigmoid(lambda * (q_data - q_actor.min(q_flow)) / eta)
}

/// Fraction of weights strictly above each threshold.
pub fn guidance_stats(g: &[f64], deltas: &[f64]) -> Vec<f64> {
    deltas
        .iter()
        .map(|&d| g.iter().filter(|&&v| v > d).count() as f64 / g.len() as f64)
        .collect()
}

/// Runtime guidance settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Guidance {
    pub mode: GuidanceMode,
    pub eta: f64,
    pub awr_clip: f64,
    pub lambda_floor: f64,
}

impl Guidance {
    pub fn new(mode: GuidanceMode, eta: f64) -> Self {
        Guidance {
            mode,
            eta,
            awr_clip: DEFAULT_AWR_CLIP,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid("eta", format!("must be positive, got {}", self.eta)));
        }
        if self.awr_clip.is_nan() || self.awr_clip < 1.0 {
            return Err(Error::invalid("guidance.awr_clip", "must be at least 1"));
        }
        if !(self.lambda_floor.is_finite() && self.lambda_floor > 0.0) {
            return Err(Error::invalid("guidance.lambda_floor", "must be positive"));
        }
        Ok(())
    }

    /// Per-row flow-matching weights. `q_flow` is required in `min` mode.
    pub fn weights(&self, q_data: &[f64], q_actor: &[f64], q_flow: Option<&[f64]>, lambda: f64) -> Result<Vec<f64>> {
        if q_actor.len() != q_data.len() {
            return Err(Error::shape("guidance actor values", q_data.len(), q_actor.len()));
        }
        let n = q_data.len();
        let g = match self.mode {
            GuidanceMode::None | GuidanceMode::BcOnly => vec![1.0; n],
            GuidanceMode::Softmax => (0..n)
                .map(|i| guidance_softmax(q_data[i], q_actor[i], lambda, self.eta))
                .collect(),
            GuidanceMode::Awr => (0..n)
                .map(|i| guidance_awr(q_data[i], q_actor[i], lambda, self.eta, self.awr_clip))
                .collect(),
            GuidanceMode::Min => {
                let qf = q_flow.ok_or_else(|| Error::invalid("guidance", "min mode needs flow values"))?;
                if qf.len() != n {
                    return Err(Error::shape("guidance flow values", n, qf.len()));
                }
                (0..n)
                    .map(|i| guidance_min(q_data[i], q_actor[i], qf[i], lambda, self.eta))
                    .collect()
            }
        };
        Ok(g)
    }
}

/// The actor's action for a batch plus everything needed to differentiate
/// the actor objective at it.
pub struct Proposal {
    cache: MlpCache,
    /// Network output before clipping.
    pub raw: Matrix,
    /// Clipped actions, as executed.
    pub actions: Matrix,
    pub q: QPair,
    pub q_agg: Vec<f64>,
    /// `∂Q_agg(s_i, a_i)/∂a_i` per row, when requested.
    dq_da: Option<Matrix>,
}

/// Parts of the actor objective, batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorLoss {
    pub total: f64,
    /// `mean(−λ·Q_agg)`; zero when the Q term is disabled.
    pub q_term: f64,
    /// `mean ‖a_raw − a_flow‖²`, before scaling by α.
    pub distill: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl Actor {
    pub fn spec(state_dim: usize, action_dim: usize, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(state_dim + action_dim, hidden.to_vec(), action_dim)
    }

    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::from_net(Mlp::new(Self::spec(state_dim, action_dim, hidden), rng)?, state_dim, action_dim)
    }

    pub fn from_net(net: Mlp, state_dim: usize, action_dim: usize) -> Result<Self> {
        if net.spec.input_dim != state_dim + action_dim || net.spec.output_dim != action_dim {
            return Err(Error::shape(
                "actor network",
                format!("{} inputs, {action_dim} outputs", state_dim + action_dim),
                format!("{} inputs, {} outputs", net.spec.input_dim, net.spec.output_dim),
            ));
        }
        Ok(Actor {
            net,
            state_dim,
            action_dim,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.net.params
    }

    fn input(&self, s: &Matrix, z: &Matrix) -> Result<Matrix> {
        if s.rows() != z.rows() {
            return Err(Error::shape("actor batch", s.rows(), z.rows()));
        }
        if s.cols() != self.state_dim {
            return Err(Error::shape("actor state width", self.state_dim, s.cols()));
        }
        if z.cols() != self.action_dim {
            return Err(Error::shape("actor noise width", self.action_dim, z.cols()));
        }
        Matrix::hcat(&[s, z])
    }

    /// `clip(μ(s, z))` with one forward pass.
    pub fn sample(&self, s: &Matrix, z: &Matrix) -> Result<Matrix> {
        let raw = self.net.predict(&self.input(s, z)?, None)?;
        Ok(raw.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// Evaluates the actor at `(s, z)` and the online critic at the clipped
    /// actions. With `with_grad`, also records the action gradient of the
    /// aggregated Q needed by [`Actor::loss`].
    pub fn propose(&self, critic: &Critic, s: &Matrix, z: &Matrix, with_grad: bool) -> Result<Proposal> {
        let (raw, cache) = self.net.forward(&self.input(s, z)?, None)?;
        let actions = raw.map(|v| v.clamp(-1.0, 1.0));
        let (q, dq_da) = if with_grad {
            let (q, g) = critic.action_gradients(s, &actions, &vec![1.0; s.rows()])?;
            (q, Some(g))
        } else {
            (critic.q_pair(s, &actions, crate::critic::Which::Online)?, None)
        };
        let q_agg = q.aggregate(critic.aggregation);
        Ok(Proposal {
            cache,
            raw,
            actions,
            q,
            q_agg,
            dq_da,
        })
    }

    /// `mean[−λ·Q_agg(s, clip(μ(s,z))) + α·‖μ(s,z) − a_flow‖²]` and its
    /// gradient. The Q term is evaluated on the clipped action, the
    /// distillation term on the raw network output; `a_flow` is a constant.
    pub fn loss(
        &self,
        p: &Proposal,
        flow_actions: &Matrix,
        lambda: f64,
        alpha: f64,
        use_q: bool,
    ) -> Result<(ActorLoss, ParamSet)> {
        if !flow_actions.same_shape(&p.raw) {
            return Err(Error::shape("distillation targets", p.raw.shape_str(), flow_actions.shape_str()));
        }
        let b = p.raw.rows();
        let bf = b as f64;
        let mut grad = Matrix::zeros(b, self.action_dim);
        let mut distill = 0.0;
        for i in 0..b {
            for j in 0..self.action_dim {
                let d = p.raw.get(i, j) - flow_actions.get(i, j);
                distill += d * d;
                grad.set(i, j, 2.0 * alpha * d / bf);
            }
        }
        distill /= bf;
        let mut q_term = 0.0;
        if use_q {
            let dq = p
                .dq_da
                .as_ref()
                .ok_or_else(|| Error::invalid("actor proposal", "Q gradients were not recorded"))?;
            for i in 0..b {
                q_term -= lambda * p.q_agg[i];
                for j in 0..self.action_dim {
                    let raw = p.raw.get(i, j);
                    if raw.abs() <= 1.0 {
                        let v = grad.get(i, j) - lambda * dq.get(i, j) / bf;
                        grad.set(i, j, v);
                    }
                }
            }
            q_term /= bf;
        }
        let total = q_term + alpha * distill;
        if !total.is_finite() {
            return Err(Error::non_finite("actor loss"));
        }
        let grads = self.net.backward_params(&p.cache, &grad)?;
        Ok((ActorLoss { total, q_term, distill }, grads))
    }

    pub fn apply(&mut self, grads: &ParamSet, adam: &mut AdamState) -> Result<()> {
        adam_step(&mut self.net.params, grads, adam)
    }
}
