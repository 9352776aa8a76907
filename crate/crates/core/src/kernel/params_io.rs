//! Parameter checkpoints: a JSON manifest plus a raw little-endian f64 blob.
//!
//! Blob order is, per layer, the weight matrix (row-major, `fan_in × fan_out`),
//! the biases, then the normalization gain and offset when present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::{Layer, MlpSpec, Norm, ParamSet};
use crate::error::{Error, Result};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub weight: [usize; 2],
    pub bias: usize,
    pub norm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsManifest {
    pub format_version: u32,
    pub spec: MlpSpec,
    pub layers: Vec<LayerShape>,
    pub step: u64,
    pub blob: String,
    pub n_values: usize,
}

pub fn layer_shapes(params: &ParamSet) -> Vec<LayerShape> {
    params
        .layers()
        .iter()
        .map(|l| LayerShape {
            weight: [l.weight.rows(), l.weight.cols()],
            bias: l.bias.len(),
            norm: l.norm.is_some(),
        })
        .collect()
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

/// Writes `<name>.json` and `<name>.bin` into `dir`.
pub fn save_params(dir: &Path, name: &str, spec: &MlpSpec, params: &ParamSet, step: u64) -> Result<()> {
    let blob = format!("{name}.bin");
    let flat = params.flat();
    let manifest = ParamsManifest {
        format_version: PARAMS_FORMAT_VERSION,
        spec: spec.clone(),
        layers: layer_shapes(params),
        step,
        blob: blob.clone(),
        n_values: flat.len(),
    };
    let bin_path = dir.join(&blob);
    fs::write(&bin_path, encode_f64(&flat)).map_err(|e| Error::io(&bin_path, e))?;
    let json_path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: json_path.clone(),
        source: e,
    })?;
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load_params(dir: &Path, name: &str) -> Result<(MlpSpec, ParamSet, u64)> {
    let json_path = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: ParamsManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: json_path.clone(),
        source: e,
    })?;
    if manifest.format_version != PARAMS_FORMAT_VERSION {
        return Err(Error::format(
            "format_version",
            format!("expected {PARAMS_FORMAT_VERSION}, found {}", manifest.format_version),
        ));
    }
    manifest.spec.validate()?;
    let template = ParamSet::zeros(&manifest.spec);
    if layer_shapes(&template) != manifest.layers {
        return Err(Error::format("layers", "layer shapes disagree with spec"));
    }
    if manifest.n_values != template.num_params() {
        return Err(Error::format(
            "n_values",
            format!("expected {}, found {}", template.num_params(), manifest.n_values),
        ));
    }
    let bin_path = dir.join(&manifest.blob);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = manifest.n_values * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            manifest.blob.clone(),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let values = decode_f64(&bytes);
    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut offset = 0;
    let mut take = |n: usize| {
        let s = values[offset..offset + n].to_vec();
        offset += n;
        s
    };
    for shape in &manifest.layers {
        let [rows, cols] = shape.weight;
        let weight = Matrix::from_vec(rows, cols, take(rows * cols))?;
        let bias = take(shape.bias);
        let norm = shape.norm.then(|| Norm {
            gain: take(cols),
            offset: take(cols),
        });
        layers.push(Layer { weight, bias, norm });
    }
    let params = ParamSet::from_layers(layers);
    if !params.is_finite() {
        return Err(Error::format(manifest.blob, "non-finite parameter"));
    }
    Ok((manifest.spec, params, manifest.step))
}
