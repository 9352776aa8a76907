//! Scalar activations, layer normalization and the sinusoidal time embedding.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Stabilizer added to the variance in [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Standard normal CDF. Uses `erfc` so the lower tail keeps full relative precision.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GeLU, `x·Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// `Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Population-variance layer normalization followed by `gain·x̂ + offset`.
pub fn layer_norm(x: &[f64], gain: &[f64], offset: &[f64]) -> Vec<f64> {
    let (xhat, _) = normalize(x);
    xhat.iter()
        .zip(gain.iter().zip(offset))
        .map(|(&h, (&g, &o))| g * h + o)
        .collect()
}

/// Returns `(x̂, 1/sqrt(var + eps))`.
pub(crate) fn normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

/// Sinusoidal embedding of a flow time `t ∈ [0, 1]`.
///
/// With `h = dim / 2` and `p = 1000·t`, frequency `i` is
/// `exp(-ln(10000)·i/(h-1))` (just `1` when `h = 1`); the output is all sines
/// followed by all cosines.
pub fn time_embed(t: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    time_embed_into(t, &mut out);
    out
}

pub(crate) fn time_embed_into(t: f64, out: &mut [f64]) {
    let h = out.len() / 2;
    let p = 1000.0 * t;
    for i in 0..h {
        let freq = if h > 1 {
            (-(10000f64.ln()) * i as f64 / (h - 1) as f64).exp()
        } else {
            1.0
        };
        let arg = p * freq;
        out[i] = arg.sin();
        out[h + i] = arg.cos();
    }
}
