//! Central finite-difference verification of analytic gradients.

use std::fmt;

use super::mlp::ParamSet;
use crate::error::Result;

/// Denominator floor in the relative error, so parameters whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub type LossFn<'a> = Box<dyn Fn(&[ParamSet]) -> Result<f64> + 'a>;
pub type LossGradFn<'a> = Box<dyn Fn(&[ParamSet]) -> Result<(f64, Vec<ParamSet>)> + 'a>;

/// A scalar loss over one or more networks together with its analytic gradient.
pub struct GradProblem<'a> {
    pub name: String,
    pub nets: Vec<(String, ParamSet)>,
    pub loss: LossFn<'a>,
    pub loss_and_grad: LossGradFn<'a>,
}

#[derive(Clone, Debug)]
pub struct LayerError {
    pub net: String,
    pub layer: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub tolerance: f64,
    pub layers: Vec<LayerError>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.max_rel_err))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {}: max rel err {:.3e} (tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err(),
            self.tolerance
        )?;
        for l in &self.layers {
            writeln!(f, "    {} layer {}: {:.3e}", l.net, l.layer, l.max_rel_err)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares every parameter's analytic gradient with a central difference
/// using step `1e-6·(1 + |p|)`.
pub fn grad_check(problem: &GradProblem<'_>, tolerance: f64) -> Result<GradCheckReport> {
    let mut nets: Vec<ParamSet> = problem.nets.iter().map(|(_, p)| p.clone()).collect();
    let (_, analytic) = (problem.loss_and_grad)(&nets)?;
    let mut layers = Vec::new();
    for n in 0..nets.len() {
        let tensor_layers = nets[n].tensor_layers();
        let sizes: Vec<usize> = nets[n].tensors().iter().map(|t| t.len()).collect();
        let grad_flat = analytic[n].flat();
        let mut per_layer = vec![0.0f64; nets[n].layers().len()];
        let mut flat_index = 0;
        for (ti, &size) in sizes.iter().enumerate() {
            for k in 0..size {
                let original = nets[n].tensors()[ti][k];
                let h = 1e-6 * (1.0 + original.abs());
                nets[n].tensors_mut()[ti][k] = original + h;
                let plus = (problem.loss)(&nets)?;
                nets[n].tensors_mut()[ti][k] = original - h;
                let minus = (problem.loss)(&nets)?;
                nets[n].tensors_mut()[ti][k] = original;
                let numeric = (plus - minus) / (2.0 * h);
                let err = relative_error(grad_flat[flat_index], numeric);
                let layer = tensor_layers[ti];
                per_layer[layer] = per_layer[layer].max(err);
                flat_index += 1;
            }
        }
        for (layer, max_rel_err) in per_layer.into_iter().enumerate() {
            layers.push(LayerError {
                net: problem.nets[n].0.clone(),
                layer,
                max_rel_err,
            });
        }
    }
    Ok(GradCheckReport {
        name: problem.name.clone(),
        tolerance,
        layers,
    })
}

/// Wraps a problem so the analytic gradient of one parameter (the one with
/// the largest gradient magnitude in the first network) is doubled.
pub fn corrupt<'a>(problem: GradProblem<'a>) -> GradProblem<'a> {
    let inner = problem.loss_and_grad;
    GradProblem {
        name: format!("{} (corrupted)", problem.name),
        nets: problem.nets,
        loss: problem.loss,
        loss_and_grad: Box::new(move |nets| {
            let (loss, mut grads) = inner(nets)?;
            if let Some(g) = grads.first_mut() {
                let mut flat = g.flat();
                let worst = (0..flat.len())
                    .max_by(|&a, &b| flat[a].abs().total_cmp(&flat[b].abs()))
                    .unwrap_or(0);
                flat[worst] *= 2.0;
                g.set_flat(&flat)?;
            }
            Ok((loss, grads))
        }),
    }
}
