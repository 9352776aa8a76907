//! Offline datasets: behavior-mix generation, minibatch sampling, and the
//! on-disk format (JSON manifest plus raw little-endian columns).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::oracle::Greedy;
use super::spec::{EnvId, EnvSpec, GOAL_LOW, BANDIT_LOW_MODE};
use crate::error::{Error, Result};
use crate::kernel::{Matrix, Rng};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const STD_FLOOR: f64 = 1e-8;
pub const EXPERT_NOISE: f64 = 0.05;
pub const NOISY_EXPERT_NOISE: f64 = 0.3;
pub const LOW_MODE_NOISE: f64 = 0.05;
const GENERATION_STREAM: u64 = 0x6461_7461;
const MIX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Expert,
    NoisyExpert,
    Random,
    LowMode,
}

/// Episode-level mixture weights over behavior policies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BehaviorMix {
    #[serde(default)]
    pub expert: f64,
    #[serde(default)]
    pub noisy_expert: f64,
    #[serde(default)]
    pub random: f64,
    #[serde(default)]
    pub low_mode: f64,
}

impl BehaviorMix {
    fn entries(&self) -> [(Behavior, f64); 4] {
        [
            (Behavior::Expert, self.expert),
            (Behavior::NoisyExpert, self.noisy_expert),
            (Behavior::Random, self.random),
            (Behavior::LowMode, self.low_mode),
        ]
    }

    pub fn validate(&self, env: EnvId) -> Result<()> {
        let mut total = 0.0;
        for (b, w) in self.entries() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid("mix", format!("weight for {b:?} must be >= 0, got {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > MIX_TOL {
            return Err(Error::invalid("mix", format!("weights must sum to 1, got {total}")));
        }
        if env == EnvId::LineReach && self.low_mode > 0.0 {
            return Err(Error::invalid("mix", "line-reach has no low-reward mode"));
        }
        Ok(())
    }

    /// Draws one behavior with probability proportional to its weight.
    pub fn pick(&self, rng: &mut Rng) -> Behavior {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut last = Behavior::Expert;
        for (b, w) in self.entries() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = b;
            if u < acc {
                return b;
            }
        }
        last
    }
}

impl FromStr for BehaviorMix {
    type Err = Error;

    /// Parses `name=weight` pairs separated by commas, e.g.
    /// `low-mode=0.5,expert=0.5`. Unlisted behaviors get weight 0.
    fn from_str(text: &str) -> Result<Self> {
        let mut mix = BehaviorMix::default();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid("mix", format!("expected name=weight, got `{part}`")))?;
            let w: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::invalid("mix", format!("bad weight `{value}` for {key}")))?;
            let slot = match key.trim() {
                "expert" => &mut mix.expert,
                "noisy-expert" => &mut mix.noisy_expert,
                "random" => &mut mix.random,
                "low-mode" => &mut mix.low_mode,
                other => return Err(Error::invalid("mix", format!("unknown behavior `{other}`"))),
            };
            *slot = w;
        }
        Ok(mix)
    }
}

impl fmt::Display for BehaviorMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = ["expert", "noisy-expert", "random", "low-mode"];
        let parts: Vec<String> = self
            .entries()
            .iter()
            .zip(names)
            .filter(|((_, w), _)| *w > 0.0)
            .map(|((_, w), n)| format!("{n}={w}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Per-dimension state standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect()
    }

    /// Normalizes every row of a raw state matrix.
    pub fn apply_rows(&self, raw: &Matrix) -> Matrix {
        let mut out = raw.clone();
        for i in 0..out.rows() {
            for (j, x) in out.row_mut(i).iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// A static offline dataset with column storage.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub env_id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub seed: u64,
    pub mix: BehaviorMix,
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: Vec<f32>,
    pub s_next: Vec<f32>,
    pub terminal: Vec<u8>,
    pub normalizer: Normalizer,
}

fn column_stats(s: &[f32], dim: usize) -> Normalizer {
    let n = s.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in s.chunks(dim) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in s.chunks(dim) {
        for j in 0..dim {
            var[j] += (row[j] as f64 - mean[j]).powi(2);
        }
    }
    let std = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    Normalizer { mean, std }
}

fn behavior_action(env: &EnvSpec, greedy: &Greedy, b: Behavior, s: &[f64], rng: &mut Rng) -> Vec<f64> {
    let d = env.action_dim;
    let a: Vec<f64> = match b {
        Behavior::Expert | Behavior::NoisyExpert => {
            let sigma = if b == Behavior::Expert {
                EXPERT_NOISE
            } else {
                NOISY_EXPERT_NOISE
            };
            let noise = rng.standard_normal(d);
            greedy
                .action(s)
                .iter()
                .zip(noise)
                .map(|(g, e)| g + sigma * e)
                .collect()
        }
        Behavior::Random => (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        Behavior::LowMode => {
            let noise = rng.standard_normal(d);
            match env.id {
                EnvId::BanditBimodal => vec![BANDIT_LOW_MODE + LOW_MODE_NOISE * noise[0]],
                _ => (0..d)
                    .map(|j| {
                        let toward = ((GOAL_LOW[j] - s[j]) / env.move_scale()).clamp(-1.0, 1.0);
                        toward + LOW_MODE_NOISE * noise[j]
                    })
                    .collect(),
            }
        }
    };
    a.into_iter().map(|x| x.clamp(-1.0, 1.0)).collect()
}

/// Rolls behavior episodes until `n` transitions are collected. Episodes end
/// on goal arrival or at the horizon; a final episode may be cut short.
pub fn generate_dataset(env: &EnvSpec, n: usize, mix: &BehaviorMix, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::invalid("n", "dataset needs at least one transition"));
    }
    mix.validate(env.id)?;
    let greedy = Greedy::for_env(env)?;
    let mut rng = Rng::new(seed, GENERATION_STREAM);
    let (sd, ad) = (env.state_dim, env.action_dim);
    let mut ds = OfflineDataset {
        env_id: env.id,
        state_dim: sd,
        action_dim: ad,
        seed,
        mix: mix.clone(),
        s: Vec::with_capacity(n * sd),
        a: Vec::with_capacity(n * ad),
        r: Vec::with_capacity(n),
        s_next: Vec::with_capacity(n * sd),
        terminal: Vec::with_capacity(n),
        normalizer: Normalizer::identity(sd),
    };
    while ds.len() < n {
        let behavior = mix.pick(&mut rng);
        let mut s = env.reset(&mut rng);
        for _ in 0..env.horizon {
            let a = behavior_action(env, &greedy, behavior, &s, &mut rng);
            let o = env.step(&s, &a);
            let next = &o.next_state[..sd];
            ds.s.extend(s.iter().map(|&x| x as f32));
            ds.a.extend(a.iter().map(|&x| x as f32));
            ds.r.push(o.reward as f32);
            ds.s_next.extend(next.iter().map(|&x| x as f32));
            ds.terminal.push(o.terminal as u8);
            if o.terminal || ds.len() == n {
                break;
            }
            s = next.to_vec();
        }
    }
    ds.normalizer = column_stats(&ds.s, sd);
    Ok(ds)
}

/// A sampled minibatch. States are normalized; actions and rewards are raw.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub states: Matrix,
    pub next_states: Matrix,
    pub raw_states: Matrix,
    pub raw_next_states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    /// 1.0 for terminal rows, 0.0 otherwise.
    pub terminals: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        self.s[i * self.state_dim..(i + 1) * self.state_dim]
            .iter()
            .map(|&x| x as f64)
            .collect()
    }

    pub fn action(&self, i: usize) -> Vec<f64> {
        self.a[i * self.action_dim..(i + 1) * self.action_dim]
            .iter()
            .map(|&x| x as f64)
            .collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let b = indices.len();
        let mut raw_states = Matrix::zeros(b, sd);
        let mut raw_next_states = Matrix::zeros(b, sd);
        let mut actions = Matrix::zeros(b, ad);
        let mut rewards = Vec::with_capacity(b);
        let mut terminals = Vec::with_capacity(b);
        for (row, &i) in indices.iter().enumerate() {
            for j in 0..sd {
                raw_states.set(row, j, self.s[i * sd + j] as f64);
                raw_next_states.set(row, j, self.s_next[i * sd + j] as f64);
            }
            for j in 0..ad {
                actions.set(row, j, self.a[i * ad + j] as f64);
            }
            rewards.push(self.r[i] as f64);
            terminals.push(self.terminal[i] as f64);
        }
        Batch {
            indices: indices.to_vec(),
            states: self.normalizer.apply_rows(&raw_states),
            next_states: self.normalizer.apply_rows(&raw_next_states),
            raw_states,
            raw_next_states,
            actions,
            rewards,
            terminals,
        }
    }

    /// `batch_size` indices drawn uniformly with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::invalid("dataset", "cannot sample from an empty dataset"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        let n = self.len();
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.index(n)).collect();
        Ok(self.batch(&idx))
    }
}

pub fn sample_minibatch(ds: &OfflineDataset, batch_size: usize, rng: &mut Rng) -> Result<Batch> {
    ds.sample(batch_size, rng)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub s: String,
    pub a: String,
    pub r: String,
    pub s_next: String,
    pub terminal: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub env_id: String,
    pub n: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub seed: u64,
    pub mix: BehaviorMix,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub files: DatasetFiles,
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32s(dir: &Path, field: &str, file: &str, count: usize) -> Result<Vec<f32>> {
    let bytes = read_blob(dir, field, file, count * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect())
}

fn read_blob(dir: &Path, field: &str, file: &str, expected: usize) -> Result<Vec<u8>> {
    let path = dir.join(file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected {
        return Err(Error::format(
            format!("files.{field}"),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes)
}

pub fn save_dataset(ds: &OfflineDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = DatasetFiles {
        s: "s.bin".into(),
        a: "a.bin".into(),
        r: "r.bin".into(),
        s_next: "s_next.bin".into(),
        terminal: "terminal.bin".into(),
    };
    let blobs: [(&str, Vec<u8>); 5] = [
        (&files.s, f32_bytes(&ds.s)),
        (&files.a, f32_bytes(&ds.a)),
        (&files.r, f32_bytes(&ds.r)),
        (&files.s_next, f32_bytes(&ds.s_next)),
        (&files.terminal, ds.terminal.clone()),
    ];
    for (name, bytes) in blobs {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        env_id: ds.env_id.name().to_string(),
        n: ds.len(),
        state_dim: ds.state_dim,
        action_dim: ds.action_dim,
        seed: ds.seed,
        mix: ds.mix.clone(),
        state_mean: ds.normalizer.mean.clone(),
        state_std: ds.normalizer.std.clone(),
        files,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<OfflineDataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            "format_version",
            format!("expected {DATASET_FORMAT_VERSION}, found {}", m.format_version),
        ));
    }
    let env_id: EnvId = m.env_id.parse()?;
    let env = EnvSpec::new(env_id);
    if m.n == 0 {
        return Err(Error::format("n", "dataset must hold at least one transition"));
    }
    if m.state_dim != env.state_dim {
        return Err(Error::format("state_dim", format!("{} does not match {env_id}", m.state_dim)));
    }
    if m.action_dim != env.action_dim {
        return Err(Error::format("action_dim", format!("{} does not match {env_id}", m.action_dim)));
    }
    if m.state_mean.len() != m.state_dim || m.state_mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::format("state_mean", "needs one finite entry per state dimension"));
    }
    if m.state_std.len() != m.state_dim || m.state_std.iter().any(|x| !(x.is_finite() && *x >= STD_FLOOR)) {
        return Err(Error::format("state_std", "needs one finite entry >= 1e-8 per state dimension"));
    }
    m.mix.validate(env_id).map_err(|e| Error::format("mix", e.to_string()))?;
    let (n, sd, ad) = (m.n, m.state_dim, m.action_dim);
    let ds = OfflineDataset {
        env_id,
        state_dim: sd,
        action_dim: ad,
        seed: m.seed,
        mix: m.mix,
        s: read_f32s(dir, "s", &m.files.s, n * sd)?,
        a: read_f32s(dir, "a", &m.files.a, n * ad)?,
        r: read_f32s(dir, "r", &m.files.r, n)?,
        s_next: read_f32s(dir, "s_next", &m.files.s_next, n * sd)?,
        terminal: read_blob(dir, "terminal", &m.files.terminal, n)?,
        normalizer: Normalizer {
            mean: m.state_mean,
            std: m.state_std,
        },
    };
    for (field, col) in [("s", &ds.s), ("r", &ds.r), ("s_next", &ds.s_next)] {
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(format!("files.{field}"), "non-finite entry"));
        }
    }
    if ds.a.iter().any(|x| !(x.is_finite() && (-1.0..=1.0).contains(x))) {
        return Err(Error::format("files.a", "action outside [-1, 1]"));
    }
    if ds.terminal.iter().any(|&t| t > 1) {
        return Err(Error::format("files.terminal", "entries must be 0 or 1"));
    }
    Ok(ds)
}
