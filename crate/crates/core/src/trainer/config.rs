//! Training configuration: one JSON document, unknown fields rejected, with
//! dotted `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::actor::{Guidance, GuidanceMode, DEFAULT_AWR_CLIP, DEFAULT_DELTAS, DEFAULT_LAMBDA_FLOOR};
use crate::critic::{Aggregation, BellmanTarget, DEFAULT_TAU};
use crate::env::EnvId;
use crate::error::{Error, Result};
use crate::flow::DEFAULT_EULER_STEPS;
use crate::kernel::adam::DEFAULT_LEARNING_RATE;

/// Which flow parameters the actor distills from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillTarget {
    Current,
    Polyak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    #[serde(default = "default_mode")]
    pub mode: GuidanceMode,
    #[serde(default = "default_awr_clip")]
    pub awr_clip: f64,
    #[serde(default = "default_lambda_floor")]
    pub lambda_floor: f64,
    /// Thresholds reported as `g_p_gt_<δ>` metrics columns.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mode: default_mode(),
            awr_clip: default_awr_clip(),
            lambda_floor: default_lambda_floor(),
            deltas: default_deltas(),
        }
    }
}

fn default_mode() -> GuidanceMode {
    GuidanceMode::Softmax
}
fn default_awr_clip() -> f64 {
    DEFAULT_AWR_CLIP
}
fn default_lambda_floor() -> f64 {
    DEFAULT_LAMBDA_FLOOR
}
fn default_deltas() -> Vec<f64> {
    DEFAULT_DELTAS.to_vec()
}
fn default_total_steps() -> u64 {
    50_000
}
fn default_batch_size() -> usize {
    256
}
fn default_gamma() -> f64 {
    0.99
}
fn default_alpha() -> f64 {
    1.0
}
fn default_eta() -> f64 {
    1e-3
}
fn default_target() -> BellmanTarget {
    BellmanTarget::Standard
}
fn default_aggregation() -> Aggregation {
    Aggregation::Mean
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_euler() -> usize {
    DEFAULT_EULER_STEPS
}
fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn default_time_embed() -> usize {
    64
}
fn default_distill() -> DistillTarget {
    DistillTarget::Current
}
fn default_eval_every() -> u64 {
    5_000
}
fn default_eval_episodes() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env_id: EnvId,
    pub dataset_path: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_total_steps")]
    pub total_steps: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default = "default_target")]
    pub bellman_target: BellmanTarget,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_euler")]
    pub euler_steps: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_time_embed")]
    pub time_embed_dim: usize,
    #[serde(default = "default_distill")]
    pub distill_target: DistillTarget,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub metrics_path: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
}

/// Fields that may change between a checkpoint and a resumed run.
const RESUMABLE_FIELDS: [&str; 4] = ["total_steps", "dataset_path", "metrics_path", "checkpoint_path"];

impl TrainConfig {
    /// A config with every default filled in.
    pub fn new(env_id: EnvId, dataset_path: impl Into<PathBuf>) -> Self {
        let value = serde_json::json!({
            "env_id": env_id,
            "dataset_path": dataset_path.into(),
        });
        serde_json::from_value(value).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_value(value).map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and applies `key.path=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg = Self::from_value(value)?;
        if cfg.dataset_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset_path = dir.join(&cfg.dataset_path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be positive, got {v}")))
            }
        };
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        positive("eta", self.eta)?;
        positive("learning_rate", self.learning_rate)?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau", format!("must lie in (0, 1], got {}", self.tau)));
        }
        if self.euler_steps == 0 {
            return Err(Error::invalid("euler_steps", "must be at least 1"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&h| h < 2) {
            return Err(Error::invalid("hidden_dims", "needs at least one layer, each at least 2 wide"));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::invalid("time_embed_dim", "must be a positive even number"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::invalid("eval_episodes", "must be at least 1"));
        }
        self.guidance().validate()?;
        let d = &self.guidance.deltas;
        if d.iter().any(|x| !x.is_finite()) || d.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("guidance.deltas", "must be finite and strictly ascending"));
        }
        Ok(())
    }

    pub fn guidance(&self) -> Guidance {
        Guidance {
            mode: self.guidance.mode,
            eta: self.eta,
            awr_clip: self.guidance.awr_clip,
            lambda_floor: self.guidance.lambda_floor,
        }
    }

    fn identity_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            for f in RESUMABLE_FIELDS {
                map.remove(f);
            }
        }
        v
    }

    /// SHA-256 over the canonical JSON of every field that determines the
    /// training trajectory.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.identity_value()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Dotted name of the first trajectory-determining field that differs.
    pub fn first_difference(&self, other: &TrainConfig) -> Option<String> {
        diff_values("", &self.identity_value(), &other.identity_value())
    }
}

fn diff_values(prefix: &str, a: &Value, b: &Value) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => {
                        if let Some(p) = diff_values(&path, u, v) {
                            return Some(p);
                        }
                    }
                    _ => return Some(path),
                }
            }
            None
        }
        _ if a == b => None,
        _ => Some(if prefix.is_empty() { "config".into() } else { prefix.into() }),
    }
}

/// Sets `key.path` in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("--set", format!("expected key=value, got `{assignment}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::invalid("--set", "empty key"));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::invalid(key, format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}
