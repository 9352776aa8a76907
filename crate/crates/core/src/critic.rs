//! Double-Q critic with Polyak-averaged targets and the two Bellman target
//! variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{adam_step, AdamState, Matrix, Mlp, MlpSpec, ParamSet, Rng};

pub const DEFAULT_TAU: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Mean,
    Min,
}

/// Combines the two heads' values for one row.
#[inline]
pub fn q_agg(q1: f64, q2: f64, aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::Mean => 0.5 * (q1 + q2),
        Aggregation::Min => q1.min(q2),
    }
}

/// Per-head weights of `d q_agg / d q_i`. For `min`, ties go to head 1.
#[inline]
pub fn q_agg_weights(q1: f64, q2: f64, aggregation: Aggregation) -> (f64, f64) {
    match aggregation {
        Aggregation::Mean => (0.5, 0.5),
        Aggregation::Min if q1 <= q2 => (1.0, 0.0),
        Aggregation::Min => (0.0, 1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BellmanTarget {
    Standard,
    Vabc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Online,
    Target,
}

/// Values of both heads for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct QPair {
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
}

impl QPair {
    pub fn aggregate(&self, aggregation: Aggregation) -> Vec<f64> {
        self.q1
            .iter()
            .zip(&self.q2)
            .map(|(&a, &b)| q_agg(a, b, aggregation))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub online: [Mlp; 2],
    pub target: [Mlp; 2],
    pub aggregation: Aggregation,
    pub gamma: f64,
    pub tau: f64,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl Critic {
    pub fn spec(state_dim: usize, action_dim: usize, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(state_dim + action_dim, hidden.to_vec(), 1).with_layer_norm()
    }

    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        aggregation: Aggregation,
        gamma: f64,
        tau: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let spec = Self::spec(state_dim, action_dim, hidden);
        let h1 = Mlp::new(spec.clone(), rng)?;
        let h2 = Mlp::new(spec, rng)?;
        Self::from_heads([h1, h2], aggregation, gamma, tau, state_dim, action_dim)
    }

    /// Builds a critic whose targets start as exact copies of `heads`.
    pub fn from_heads(
        heads: [Mlp; 2],
        aggregation: Aggregation,
        gamma: f64,
        tau: f64,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid("tau", format!("must lie in (0, 1], got {tau}")));
        }
        for h in &heads {
            if h.spec.input_dim != state_dim + action_dim || h.spec.output_dim != 1 {
                return Err(Error::shape(
                    "critic head",
                    format!("{} inputs, 1 output", state_dim + action_dim),
                    format!("{} inputs, {} outputs", h.spec.input_dim, h.spec.output_dim),
                ));
            }
        }
        let target = heads.clone();
        Ok(Critic {
            online: heads,
            target,
            aggregation,
            gamma,
            tau,
            state_dim,
            action_dim,
        })
    }

    pub fn input(&self, s: &Matrix, a: &Matrix) -> Result<Matrix> {
        if s.rows() != a.rows() {
            return Err(Error::shape("critic batch", s.rows(), a.rows()));
        }
        if s.cols() != self.state_dim {
            return Err(Error::shape("critic state width", self.state_dim, s.cols()));
        }
        if a.cols() != self.action_dim {
            return Err(Error::shape("critic action width", self.action_dim, a.cols()));
        }
        Matrix::hcat(&[s, a])
    }

    fn heads(&self, which: Which) -> &[Mlp; 2] {
        match which {
            Which::Online => &self.online,
            Which::Target => &self.target,
        }
    }

    pub fn q_pair(&self, s: &Matrix, a: &Matrix, which: Which) -> Result<QPair> {
        let x = self.input(s, a)?;
        let [h1, h2] = self.heads(which);
        Ok(QPair {
            q1: h1.predict(&x, None)?.into_vec(),
            q2: h2.predict(&x, None)?.into_vec(),
        })
    }

    pub fn q_agg(&self, s: &Matrix, a: &Matrix, which: Which) -> Result<Vec<f64>> {
        Ok(self.q_pair(s, a, which)?.aggregate(self.aggregation))
    }

    /// `y = r + (1 − terminal)·γ·Q̄(s', a')` with `a'` supplied by the caller.
    pub fn target_standard(&self, r: &[f64], s_next: &Matrix, terminal: &[f64], a_next: &Matrix) -> Result<Vec<f64>> {
        check_rows(r, terminal, s_next)?;
        let q = self.q_agg(s_next, a_next, Which::Target)?;
        Ok((0..r.len())
            .map(|i| r[i] + (1.0 - terminal[i]) * self.gamma * q[i])
            .collect())
    }

    /// `y = r + (1 − terminal)·(γ/2)·(Q̄(s', a_actor) + Q̄(s', a_flow))` where
    /// both actions were produced from the same noise.
    pub fn target_vabc(
        &self,
        r: &[f64],
        s_next: &Matrix,
        terminal: &[f64],
        a_actor: &Matrix,
        a_flow: &Matrix,
    ) -> Result<Vec<f64>> {
        check_rows(r, terminal, s_next)?;
        let qa = self.q_agg(s_next, a_actor, Which::Target)?;
        let qf = self.q_agg(s_next, a_flow, Which::Target)?;
        let half = 0.5 * self.gamma;
        Ok((0..r.len())
            .map(|i| r[i] + (1.0 - terminal[i]) * half * (qa[i] + qf[i]))
            .collect())
    }

    /// `mean[(Q₁ − y)² + (Q₂ − y)²]` and per-head parameter gradients.
    pub fn loss_and_grads(&self, s: &Matrix, a: &Matrix, y: &[f64]) -> Result<(f64, [ParamSet; 2])> {
        let x = self.input(s, a)?;
        if y.len() != x.rows() {
            return Err(Error::shape("critic targets", x.rows(), y.len()));
        }
        let b = y.len() as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(2);
        let mut sq = vec![0.0; y.len()];
        for head in &self.online {
            let (q, cache) = head.forward(&x, None)?;
            let mut g = Matrix::zeros(y.len(), 1);
            for (i, &yi) in y.iter().enumerate() {
                let r = q.get(i, 0) - yi;
                sq[i] += r * r;
                g.set(i, 0, 2.0 * r / b);
            }
            grads.push(head.backward_params(&cache, &g)?);
        }
        for v in sq {
            loss += v;
        }
        loss /= b;
        if !loss.is_finite() {
            return Err(Error::non_finite("critic loss"));
        }
        let g2 = grads.pop().expect("two heads");
        let g1 = grads.pop().expect("two heads");
        Ok((loss, [g1, g2]))
    }

    /// One Adam step on both heads followed by the Polyak target update.
    pub fn update(&mut self, s: &Matrix, a: &Matrix, y: &[f64], adam: &mut [AdamState; 2]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(s, a, y)?;
        for k in 0..2 {
            adam_step(&mut self.online[k].params, &grads[k], &mut adam[k])?;
        }
        for k in 0..2 {
            self.target[k].params.polyak_from(&self.online[k].params, self.tau)?;
        }
        Ok(loss)
    }

    /// Hard copy of the online heads into the targets.
    pub fn sync_targets(&mut self) -> Result<()> {
        for k in 0..2 {
            self.target[k].params.copy_from(&self.online[k].params)?;
        }
        Ok(())
    }

    /// Gradient of `Σ_i w_i·Q_agg(s_i, a_i)` with respect to the actions,
    /// using the online heads. Also returns the Q pair at `(s, a)`.
    pub fn action_gradients(&self, s: &Matrix, a: &Matrix, row_weights: &[f64]) -> Result<(QPair, Matrix)> {
        let x = self.input(s, a)?;
        let b = x.rows();
        let (q1, c1) = self.online[0].forward(&x, None)?;
        let (q2, c2) = self.online[1].forward(&x, None)?;
        let pair = QPair {
            q1: q1.into_vec(),
            q2: q2.into_vec(),
        };
        let mut g1 = Matrix::zeros(b, 1);
        let mut g2 = Matrix::zeros(b, 1);
        for i in 0..b {
            let (w1, w2) = q_agg_weights(pair.q1[i], pair.q2[i], self.aggregation);
            g1.set(i, 0, w1 * row_weights[i]);
            g2.set(i, 0, w2 * row_weights[i]);
        }
        let d1 = self.online[0].backward_inputs(&c1, &g1)?;
        let d2 = self.online[1].backward_inputs(&c2, &g2)?;
        let mut out = Matrix::zeros(b, self.action_dim);
        for i in 0..b {
            for j in 0..self.action_dim {
                let col = self.state_dim + j;
                out.set(i, j, d1.get(i, col) + d2.get(i, col));
            }
        }
        Ok((pair, out))
    }
}

fn check_rows(r: &[f64], terminal: &[f64], s_next: &Matrix) -> Result<()> {
    if r.len() != s_next.rows() {
        return Err(Error::shape("rewards", s_next.rows(), r.len()));
    }
    if terminal.len() != s_next.rows() {
        return Err(Error::shape("terminals", s_next.rows(), terminal.len()));
    }
    Ok(())
}
