//! Dense GeLU multilayer perceptrons with optional per-layer normalization,
//! an optional sinusoidal time input, and exact reverse-mode gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::activations::{gelu, gelu_grad, normalize, time_embed_into};
use super::matrix::{affine, input_grads, weight_grads, Matrix};
use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub use_layer_norm: bool,
    /// Width of the sinusoidal time embedding appended to the input; 0 disables it.
    pub time_embed_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
            use_layer_norm: false,
            time_embed_dim: 0,
        }
    }

    pub fn with_layer_norm(mut self) -> Self {
        self.use_layer_norm = true;
        self
    }

    pub fn with_time_embed(mut self, dim: usize) -> Self {
        self.time_embed_dim = dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be positive"));
        }
        if self.output_dim == 0 {
            return Err(Error::invalid("output_dim", "must be positive"));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::invalid("hidden_dims", "must be non-empty"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden_dims", "all widths must be positive"));
        }
        if self.use_layer_norm && self.hidden_dims.iter().any(|&h| h < 2) {
            return Err(Error::invalid(
                "hidden_dims",
                "layer normalization needs widths of at least 2",
            ));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::invalid("time_embed_dim", "must be even"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every linear layer, first to last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim + self.time_embed_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub norm: Option<Norm>,
}

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)
}

/// Weights of one network. Every mutable access bumps a version counter so
/// that caches from an earlier forward pass are detected as stale.
#[derive(Debug)]
pub struct ParamSet {
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl ParamSet {
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        ParamSet {
            layers,
            id: fresh_id(),
            version: 0,
        }
    }

    /// Glorot-uniform weights, zero biases, unit gains and zero offsets.
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Self {
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-limit, limit))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                    norm: (spec.use_layer_norm && l < last).then(|| Norm {
                        gain: vec![1.0; fan_out],
                        offset: vec![0.0; fan_out],
                    }),
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| Layer {
                weight: Matrix::zeros(fan_in, fan_out),
                bias: vec![0.0; fan_out],
                norm: (spec.use_layer_norm && l < last).then(|| Norm {
                    gain: vec![0.0; fan_out],
                    offset: vec![0.0; fan_out],
                }),
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![0.0; l.bias.len()],
                norm: l.norm.as_ref().map(|n| Norm {
                    gain: vec![0.0; n.gain.len()],
                    offset: vec![0.0; n.offset.len()],
                }),
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    /// Flat views in storage order: per layer, weights, biases, then gain and offset.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias[..]);
            if let Some(n) = &l.norm {
                out.push(&n.gain[..]);
                out.push(&n.offset[..]);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias[..]);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain[..]);
                out.push(&mut n.offset[..]);
            }
        }
        out
    }

    /// Layer index of every tensor returned by [`ParamSet::tensors`].
    pub fn tensor_layers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(i);
            out.push(i);
            if l.norm.is_some() {
                out.push(i);
                out.push(i);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape("ParamSet::set_flat", self.num_params(), values.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.len() == b.len())
            && self.tensors().len() == other.tensors().len()
    }

    pub fn check_shape(&self, other: &ParamSet, context: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                context,
                format!("{} parameters in {} layers", self.num_params(), self.layers.len()),
                format!("{} parameters in {} layers", other.num_params(), other.layers.len()),
            ))
        }
    }

    /// Exact copy of `other`'s values.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        self.check_shape(other, "ParamSet::copy_from")?;
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    /// Polyak averaging: `self ← (1 − tau)·self + tau·online`.
    pub fn polyak_from(&mut self, online: &ParamSet, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid("tau", format!("{tau} is outside [0, 1]")));
        }
        self.check_shape(online, "polyak_update")?;
        let keep = 1.0 - tau;
        let src = online.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = keep * *d + tau * s;
            }
        }
        Ok(())
    }

    /// `self += scale · other`, elementwise.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.check_shape(other, "ParamSet::add_scaled")?;
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Polyak averaging as a free function.
pub fn polyak_update(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    target.polyak_from(online, tau)
}

struct LayerCache {
    /// Linear output.
    pre: Matrix,
    /// Normalized linear output and per-row `1/σ`, when the layer is normalized.
    xhat: Option<(Matrix, Vec<f64>)>,
    /// Input to the activation (post-normalization).
    act_in: Option<Matrix>,
    /// Activation output, i.e. the next layer's input.
    out: Matrix,
}

/// Activations recorded by [`Mlp::forward`] for a matching backward pass.
pub struct MlpCache {
    owner: u64,
    version: u64,
    input: Matrix,
    hidden: Vec<LayerCache>,
    output_shape: (usize, usize),
}

impl MlpCache {
    pub fn batch(&self) -> usize {
        self.input.rows()
    }
}

/// Gradients returned by [`Mlp::backward`].
pub struct Gradients {
    pub params: ParamSet,
    /// Gradient with respect to the non-time input columns.
    pub inputs: Matrix,
}

/// A network: architecture plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParamSet,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::init(&spec, rng);
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let expected = ParamSet::zeros(&spec);
        expected.check_shape(&params, "Mlp::from_params")?;
        Ok(Mlp { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::zeros(&spec);
        Ok(Mlp { spec, params })
    }

    /// Zeroes the output layer so the network starts as the zero function.
    pub fn zero_output_layer(&mut self) {
        let last = self.params.layers().len() - 1;
        let layer = &mut self.params.layers_mut()[last];
        layer.weight.as_mut_slice().fill(0.0);
        layer.bias.fill(0.0);
    }

    fn build_input(&self, inputs: &Matrix, t: Option<&[f64]>) -> Result<Matrix> {
        if inputs.cols() != self.spec.input_dim {
            return Err(Error::shape(
                "mlp input width",
                self.spec.input_dim,
                inputs.cols(),
            ));
        }
        match (t, self.spec.time_embed_dim) {
            (None, 0) => Ok(inputs.clone()),
            (Some(_), 0) => Err(Error::shape(
                "mlp time input",
                "no time input (time_embed_dim = 0)",
                "a time batch",
            )),
            (None, _) => Err(Error::shape(
                "mlp time input",
                "a time batch",
                "none",
            )),
            (Some(t), e) => {
                if t.len() != inputs.rows() {
                    return Err(Error::shape("mlp time batch", inputs.rows(), t.len()));
                }
                let width = self.spec.input_dim + e;
                let mut m = Matrix::zeros(inputs.rows(), width);
                for (i, &ti) in t.iter().enumerate() {
                    let row = m.row_mut(i);
                    row[..self.spec.input_dim].copy_from_slice(inputs.row(i));
                    time_embed_into(ti, &mut row[self.spec.input_dim..]);
                }
                Ok(m)
            }
        }
    }

    fn hidden_layer(&self, l: usize, h: &Matrix) -> LayerCache {
        let layer = &self.params.layers()[l];
        let pre = affine(h, &layer.weight, &layer.bias);
        match &layer.norm {
            None => {
                let out = pre.map(gelu);
                LayerCache {
                    pre,
                    xhat: None,
                    act_in: None,
                    out,
                }
            }
            Some(norm) => {
                let (rows, cols) = (pre.rows(), pre.cols());
                let mut xhat = Matrix::zeros(rows, cols);
                let mut inv = Vec::with_capacity(rows);
                let mut act_in = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    let (xh, inv_std) = normalize(pre.row(i));
                    for j in 0..cols {
                        act_in.set(i, j, norm.gain[j] * xh[j] + norm.offset[j]);
                    }
                    xhat.row_mut(i).copy_from_slice(&xh);
                    inv.push(inv_std);
                }
                let out = act_in.map(gelu);
                LayerCache {
                    pre,
                    xhat: Some((xhat, inv)),
                    act_in: Some(act_in),
                    out,
                }
            }
        }
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, inputs: &Matrix, t: Option<&[f64]>) -> Result<Matrix> {
        let mut h = self.build_input(inputs, t)?;
        let n_hidden = self.spec.hidden_dims.len();
        for l in 0..n_hidden {
            h = self.hidden_layer(l, &h).out;
        }
        let last = &self.params.layers()[n_hidden];
        Ok(affine(&h, &last.weight, &last.bias))
    }

    /// Forward pass recording everything [`Mlp::backward`] needs.
    pub fn forward(&self, inputs: &Matrix, t: Option<&[f64]>) -> Result<(Matrix, MlpCache)> {
        let input = self.build_input(inputs, t)?;
        let n_hidden = self.spec.hidden_dims.len();
        let mut hidden: Vec<LayerCache> = Vec::with_capacity(n_hidden);
        for l in 0..n_hidden {
            let c = self.hidden_layer(l, hidden.last().map_or(&input, |c| &c.out));
            hidden.push(c);
        }
        let last = &self.params.layers()[n_hidden];
        let out = affine(
            hidden.last().map_or(&input, |c| &c.out),
            &last.weight,
            &last.bias,
        );
        let cache = MlpCache {
            owner: self.params.id(),
            version: self.params.version(),
            input,
            hidden,
            output_shape: (out.rows(), out.cols()),
        };
        Ok((out, cache))
    }

    fn check_cache(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<()> {
        if cache.owner != self.params.id() {
            return Err(Error::StaleCache("cache was produced by a different network".into()));
        }
        if cache.version != self.params.version() {
            return Err(Error::StaleCache(format!(
                "parameters changed since the forward pass (version {} vs {})",
                cache.version,
                self.params.version()
            )));
        }
        if (grad_out.rows(), grad_out.cols()) != cache.output_shape {
            return Err(Error::shape(
                "output gradient",
                format!("{}x{}", cache.output_shape.0, cache.output_shape.1),
                grad_out.shape_str(),
            ));
        }
        Ok(())
    }

    /// Exact reverse-mode gradients of the forward map contracted with `grad_out`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<Gradients> {
        let (params, inputs) = self.backprop(cache, grad_out, true)?;
        Ok(Gradients {
            params: params.expect("requested"),
            inputs,
        })
    }

    /// Input gradients only; skips the weight-gradient products.
    pub fn backward_inputs(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<Matrix> {
        Ok(self.backprop(cache, grad_out, false)?.1)
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<ParamSet> {
        self.check_cache(cache, grad_out)?;
        Ok(self.backprop_inner(cache, grad_out, true, false).0.expect("requested"))
    }

    fn backprop(
        &self,
        cache: &MlpCache,
        grad_out: &Matrix,
        want_params: bool,
    ) -> Result<(Option<ParamSet>, Matrix)> {
        self.check_cache(cache, grad_out)?;
        let (params, inputs) = self.backprop_inner(cache, grad_out, want_params, true);
        Ok((params, inputs.expect("requested")))
    }

    fn backprop_inner(
        &self,
        cache: &MlpCache,
        grad_out: &Matrix,
        want_params: bool,
        want_inputs: bool,
    ) -> (Option<ParamSet>, Option<Matrix>) {
        let layers = self.params.layers();
        let n_hidden = self.spec.hidden_dims.len();
        let mut grads = want_params.then(|| self.params.zeros_like());

        let layer_input = |l: usize| -> &Matrix {
            if l == 0 {
                &cache.input
            } else {
                &cache.hidden[l - 1].out
            }
        };

        let mut g = grad_out.clone();
        for l in (0..=n_hidden).rev() {
            // g is the gradient w.r.t. this layer's output (pre-activation for
            // hidden layers is handled below).
            if l < n_hidden {
                let c = &cache.hidden[l];
                let act_in = c.act_in.as_ref().unwrap_or(&c.pre);
                for (gv, &u) in g.as_mut_slice().iter_mut().zip(act_in.as_slice()) {
                    *gv *= gelu_grad(u);
                }
                if let (Some((xhat, inv)), Some(norm)) = (&c.xhat, &layers[l].norm) {
                    let cols = g.cols();
                    if let Some(gr) = grads.as_mut() {
                        let gnorm = gr.layers_mut()[l].norm.as_mut().expect("norm layer");
                        for i in 0..g.rows() {
                            let gu = g.row(i);
                            let xh = xhat.row(i);
                            for j in 0..cols {
                                gnorm.gain[j] += gu[j] * xh[j];
                                gnorm.offset[j] += gu[j];
                            }
                        }
                    }
                    let n = cols as f64;
                    for i in 0..g.rows() {
                        let xh = xhat.row(i);
                        let gr = g.row_mut(i);
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for j in 0..cols {
                            let gx = gr[j] * norm.gain[j];
                            gr[j] = gx;
                            mean_g += gx;
                            mean_gx += gx * xh[j];
                        }
                        mean_g /= n;
                        mean_gx /= n;
                        for j in 0..cols {
                            gr[j] = inv[i] * (gr[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                }
            }
            if let Some(gr) = grads.as_mut() {
                let gl = &mut gr.layers_mut()[l];
                weight_grads(layer_input(l), &g, &mut gl.weight, &mut gl.bias);
            }
            if l > 0 || want_inputs {
                g = input_grads(&g, &layers[l].weight);
            }
        }
        let inputs = want_inputs.then(|| g.columns(0, self.spec.input_dim));
        (grads, inputs)
    }
}
