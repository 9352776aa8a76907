use super::mlp::ParamSet;
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;

/// Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.m.is_finite()
            && self.v.is_finite()
            && self.v.tensors().iter().all(|t| t.iter().all(|&x| x >= 0.0))
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort before any
/// state is touched.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    params.check_shape(grads, "adam_step gradients")?;
    params.check_shape(&state.m, "adam_step moments")?;
    if let Some((i, _)) = grads
        .tensors()
        .iter()
        .enumerate()
        .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
    {
        let layer = grads.tensor_layers()[i];
        return Err(Error::non_finite(format!("gradient of layer {layer}")));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let lr = state.learning_rate;
    let eps = state.eps;
    let g = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
