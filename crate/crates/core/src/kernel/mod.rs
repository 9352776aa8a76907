//! Minimal differentiable kernel: dense GeLU MLPs, layer normalization,
//! sinusoidal time embedding, reverse-mode gradients, Adam, Polyak averaging
//! and a fully specified PRNG.

pub mod activations;
pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod params_io;
pub mod rng;

pub use activations::{gelu, layer_norm, sigmoid, time_embed};
pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, GradProblem};
pub use matrix::Matrix;
pub use mlp::{polyak_update, Gradients, Layer, Mlp, MlpCache, MlpSpec, Norm, ParamSet};
pub use rng::Rng;
