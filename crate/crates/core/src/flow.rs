//! Flow-matching policy: a state- and time-conditioned velocity field,
//! Euler integration from noise to actions, and the (weighted) flow-matching
//! regression losses.

use crate::error::{Error, Result};
use crate::kernel::{Matrix, Mlp, MlpSpec, ParamSet, Rng};

pub const DEFAULT_EULER_STEPS: usize = 10;

/// Anything that can act as the right-hand side of the flow ODE.
pub trait VelocityField {
    /// Velocity at a shared time `t` for each row of `(s, x)`.
    fn velocity(&self, t: f64, s: &Matrix, x: &Matrix) -> Result<Matrix>;
}

/// `steps` explicit Euler steps from `z`; returns the final point unclipped.
pub fn euler_integrate(field: &dyn VelocityField, s: &Matrix, z: &Matrix, steps: usize) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::invalid("euler_steps", "must be at least 1"));
    }
    let dt = 1.0 / steps as f64;
    let mut x = z.clone();
    for k in 0..steps {
        let v = field.velocity(k as f64 / steps as f64, s, &x)?;
        if !v.same_shape(&x) {
            return Err(Error::shape("velocity output", x.shape_str(), v.shape_str()));
        }
        for (xi, vi) in x.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *xi += dt * vi;
        }
        if !x.is_finite() {
            return Err(Error::non_finite(format!("flow integration at Euler step {k}")));
        }
    }
    Ok(x)
}

pub fn clip_actions(x: &Matrix) -> Matrix {
    x.map(|v| v.clamp(-1.0, 1.0))
}

/// Inputs of one flow-matching regression: normalized states, data actions,
/// source noise and interpolation times (one per row).
pub struct FlowTargets<'a> {
    pub states: &'a Matrix,
    pub actions: &'a Matrix,
    pub eps: &'a Matrix,
    pub t: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowPolicy {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub euler_steps: usize,
}

impl FlowPolicy {
    pub fn spec(state_dim: usize, action_dim: usize, hidden: &[usize], time_embed_dim: usize) -> MlpSpec {
        MlpSpec::new(state_dim + action_dim, hidden.to_vec(), action_dim).with_time_embed(time_embed_dim)
    }

    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        time_embed_dim: usize,
        euler_steps: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let net = Mlp::new(Self::spec(state_dim, action_dim, hidden, time_embed_dim), rng)?;
        Self::from_net(net, state_dim, action_dim, euler_steps)
    }

    pub fn from_net(net: Mlp, state_dim: usize, action_dim: usize, euler_steps: usize) -> Result<Self> {
        if euler_steps == 0 {
            return Err(Error::invalid("euler_steps", "must be at least 1"));
        }
        if net.spec.input_dim != state_dim + action_dim || net.spec.output_dim != action_dim {
            return Err(Error::shape(
                "flow network",
                format!("{} inputs, {action_dim} outputs", state_dim + action_dim),
                format!("{} inputs, {} outputs", net.spec.input_dim, net.spec.output_dim),
            ));
        }
        if net.spec.time_embed_dim == 0 {
            return Err(Error::invalid("time_embed_dim", "the velocity field needs a time input"));
        }
        Ok(FlowPolicy {
            net,
            state_dim,
            action_dim,
            euler_steps,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.net.params
    }

    fn net_input(&self, s: &Matrix, x: &Matrix) -> Result<Matrix> {
        if s.rows() != x.rows() {
            return Err(Error::shape("flow batch", s.rows(), x.rows()));
        }
        if s.cols() != self.state_dim {
            return Err(Error::shape("flow state width", self.state_dim, s.cols()));
        }
        if x.cols() != self.action_dim {
            return Err(Error::shape("flow action width", self.action_dim, x.cols()));
        }
        Matrix::hcat(&[s, x])
    }

    /// `v(t_i, s_i, x_i)` with per-row times.
    pub fn velocity_rows(&self, t: &[f64], s: &Matrix, x: &Matrix) -> Result<Matrix> {
        self.net.predict(&self.net_input(s, x)?, Some(t))
    }

    /// Euler integration of `z` followed by clipping to `[-1, 1]`.
    pub fn integrate(&self, s: &Matrix, z: &Matrix) -> Result<Matrix> {
        Ok(clip_actions(&euler_integrate(self, s, z, self.euler_steps)?))
    }

    /// One action for one (normalized) state with fresh noise.
    pub fn sample_action(&self, s: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let z = Matrix::from_vec(1, self.action_dim, rng.standard_normal(self.action_dim))?;
        let s = Matrix::from_vec(1, s.len(), s.to_vec())?;
        Ok(self.integrate(&s, &z)?.into_vec())
    }

    /// Interpolants `a_t = (1 - t)·eps + t·a` and regression targets `a - eps`.
    fn interpolate(&self, f: &FlowTargets<'_>) -> Result<(Matrix, Matrix)> {
        let b = f.actions.rows();
        if f.eps.rows() != b || f.eps.cols() != f.actions.cols() {
            return Err(Error::shape("flow noise", f.actions.shape_str(), f.eps.shape_str()));
        }
        if f.t.len() != b {
            return Err(Error::shape("flow times", b, f.t.len()));
        }
        let mut x_t = Matrix::zeros(b, self.action_dim);
        let mut target = Matrix::zeros(b, self.action_dim);
        for i in 0..b {
            let t = f.t[i];
            for j in 0..self.action_dim {
                let (a, e) = (f.actions.get(i, j), f.eps.get(i, j));
                x_t.set(i, j, (1.0 - t) * e + t * a);
                target.set(i, j, a - e);
            }
        }
        Ok((x_t, target))
    }

    /// Unweighted flow-matching loss `mean ‖v(t, s, a_t) − (a − eps)‖²` and
    /// its parameter gradient.
    pub fn fm_bc_loss(&self, f: &FlowTargets<'_>) -> Result<(f64, ParamSet)> {
        let (x_t, target) = self.interpolate(f)?;
        let (v, cache) = self.net.forward(&self.net_input(f.states, &x_t)?, Some(f.t))?;
        let b = v.rows();
        let mut sum = 0.0;
        let mut grad = Matrix::zeros(b, self.action_dim);
        for i in 0..b {
            let mut sq = 0.0;
            for j in 0..self.action_dim {
                let r = v.get(i, j) - target.get(i, j);
                sq += r * r;
                grad.set(i, j, 2.0 * r / b as f64);
            }
            sum += sq;
        }
        let loss = sum / b as f64;
        Ok((loss, self.net.backward_params(&cache, &grad)?))
    }

    /// Per-row weighted flow-matching loss `mean g·‖v(t, s, a_t) − (a − eps)‖²`.
    /// The weights are constants: no gradient flows into them.
    pub fn weighted_fm_loss(&self, f: &FlowTargets<'_>, g: &[f64]) -> Result<(f64, ParamSet)> {
        if g.len() != f.actions.rows() {
            return Err(Error::shape("flow weights", f.actions.rows(), g.len()));
        }
        if let Some(w) = g.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid("guidance weight", format!("must be finite and >= 0, got {w}")));
        }
        let (x_t, target) = self.interpolate(f)?;
        let (v, cache) = self.net.forward(&self.net_input(f.states, &x_t)?, Some(f.t))?;
        let b = v.rows();
        let mut sum = 0.0;
        let mut grad = Matrix::zeros(b, self.action_dim);
        for (i, &w) in g.iter().enumerate() {
            let mut sq = 0.0;
            for j in 0..self.action_dim {
                let r = v.get(i, j) - target.get(i, j);
                sq += r * r;
                grad.set(i, j, 2.0 * w * r / b as f64);
            }
            sum += w * sq;
        }
        let loss = sum / b as f64;
        Ok((loss, self.net.backward_params(&cache, &grad)?))
    }
}

impl VelocityField for FlowPolicy {
    fn velocity(&self, t: f64, s: &Matrix, x: &Matrix) -> Result<Matrix> {
        let times = vec![t; s.rows()];
        self.velocity_rows(&times, s, x)
    }
}
