//! Checkpoint directories: one parameter file pair per network and per Adam
//! moment, plus `trainer_state.json` with counters, generators and config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainRngs, Trainer};
use crate::actor::Actor;
use crate::env::{EnvSpec, Normalizer, OfflineDataset};
use crate::flow::FlowPolicy;
use crate::error::{Error, Result};
use crate::kernel::params_io::{load_params, save_params};
use crate::kernel::{AdamState, Mlp, MlpSpec, ParamSet};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const STATE_FILE: &str = "trainer_state.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamCounters {
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerState {
    pub format_version: u32,
    pub step: u64,
    pub config_hash: String,
    pub config: TrainConfig,
    pub rngs: TrainRngs,
    pub normalizer: Normalizer,
    /// Keyed like the parameter files: `critic_1`, `critic_2`, `actor`, `flow`.
    pub adam: Vec<(String, AdamCounters)>,
}

fn counters(a: &AdamState) -> AdamCounters {
    AdamCounters {
        t: a.t,
        learning_rate: a.learning_rate,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
    }
}

fn write_net(dir: &Path, name: &str, net: &Mlp, step: u64) -> Result<()> {
    save_params(dir, name, &net.spec, &net.params, step)
}

fn write_adam(dir: &Path, name: &str, spec: &MlpSpec, a: &AdamState, step: u64) -> Result<()> {
    save_params(dir, &format!("adam_{name}_m"), spec, &a.m, step)?;
    save_params(dir, &format!("adam_{name}_v"), spec, &a.v, step)
}

/// Writes the full trainer state to `dir`, replacing any previous checkpoint
/// there only after the new one is complete.
pub fn save_checkpoint(t: &Trainer, dir: &Path) -> Result<()> {
    let tmp = sibling(dir, "tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let step = t.step;
    let c = &t.critic;
    write_net(&tmp, "critic_1", &c.online[0], step)?;
    write_net(&tmp, "critic_2", &c.online[1], step)?;
    write_net(&tmp, "critic_target_1", &c.target[0], step)?;
    write_net(&tmp, "critic_target_2", &c.target[1], step)?;
    write_net(&tmp, "actor", &t.actor.net, step)?;
    write_net(&tmp, "flow", &t.flow.net, step)?;
    if let Some(ft) = &t.flow_target {
        write_net(&tmp, "flow_target", &ft.net, step)?;
    }
    write_adam(&tmp, "critic_1", &c.online[0].spec, &t.adam_critic[0], step)?;
    write_adam(&tmp, "critic_2", &c.online[1].spec, &t.adam_critic[1], step)?;
    write_adam(&tmp, "actor", &t.actor.net.spec, &t.adam_actor, step)?;
    write_adam(&tmp, "flow", &t.flow.net.spec, &t.adam_flow, step)?;
    let state = TrainerState {
        format_version: CHECKPOINT_FORMAT_VERSION,
        step,
        config_hash: t.config.hash(),
        config: t.config.clone(),
        rngs: t.rngs.clone(),
        normalizer: t.dataset.normalizer.clone(),
        adam: vec![
            ("critic_1".into(), counters(&t.adam_critic[0])),
            ("critic_2".into(), counters(&t.adam_critic[1])),
            ("actor".into(), counters(&t.adam_actor)),
            ("flow".into(), counters(&t.adam_flow)),
        ],
    };
    let path = tmp.join(STATE_FILE);
    let text = serde_json::to_string_pretty(&state).expect("state serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{suffix}"));
    dir.with_file_name(name)
}

pub fn read_state(dir: &Path) -> Result<TrainerState> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let state: TrainerState = serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
    if state.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            "format_version",
            format!("expected {CHECKPOINT_FORMAT_VERSION}, found {}", state.format_version),
        ));
    }
    Ok(state)
}

fn read_net(dir: &Path, name: &str, like: &Mlp) -> Result<Mlp> {
    let (spec, params, _) = load_params(dir, name)?;
    if spec != like.spec {
        return Err(Error::format(name, "network spec differs from the config"));
    }
    Mlp::from_params(spec, params)
}

fn read_adam(dir: &Path, name: &str, like: &ParamSet, c: &AdamCounters) -> Result<AdamState> {
    let (_, m, _) = load_params(dir, &format!("adam_{name}_m"))?;
    let (_, v, _) = load_params(dir, &format!("adam_{name}_v"))?;
    like.check_shape(&m, name)?;
    like.check_shape(&v, name)?;
    let a = AdamState {
        m,
        v,
        t: c.t,
        learning_rate: c.learning_rate,
        beta1: c.beta1,
        beta2: c.beta2,
        eps: c.eps,
    };
    if !a.is_valid() {
        return Err(Error::format(format!("adam_{name}"), "moments must be finite, second moments >= 0"));
    }
    Ok(a)
}

/// Restores a trainer from `dir`. The checkpoint's config must agree with
/// `config` on every field that shapes the trajectory.
pub fn load_checkpoint(config: TrainConfig, dataset: OfflineDataset, dir: &Path) -> Result<Trainer> {
    let state = read_state(dir)?;
    if state.config_hash != config.hash() {
        let field = state
            .config
            .first_difference(&config)
            .unwrap_or_else(|| "config_hash".to_string());
        return Err(Error::ConfigMismatch { field });
    }
    if state.normalizer != dataset.normalizer {
        return Err(Error::format("normalizer", "dataset statistics differ from the checkpoint"));
    }
    let mut t = Trainer::new(config, dataset)?;
    let adam = |name: &str| -> Result<&AdamCounters> {
        state
            .adam
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::format("adam", format!("missing entry {name}")))
    };
    t.critic.online[0] = read_net(dir, "critic_1", &t.critic.online[0])?;
    t.critic.online[1] = read_net(dir, "critic_2", &t.critic.online[1])?;
    t.critic.target[0] = read_net(dir, "critic_target_1", &t.critic.target[0])?;
    t.critic.target[1] = read_net(dir, "critic_target_2", &t.critic.target[1])?;
    t.actor.net = read_net(dir, "actor", &t.actor.net)?;
    t.flow.net = read_net(dir, "flow", &t.flow.net)?;
    if let Some(ft) = t.flow_target.as_mut() {
        ft.net = read_net(dir, "flow_target", &ft.net)?;
    }
    t.adam_critic[0] = read_adam(dir, "critic_1", &t.critic.online[0].params, adam("critic_1")?)?;
    t.adam_critic[1] = read_adam(dir, "critic_2", &t.critic.online[1].params, adam("critic_2")?)?;
    t.adam_actor = read_adam(dir, "actor", &t.actor.net.params, adam("actor")?)?;
    t.adam_flow = read_adam(dir, "flow", &t.flow.net.params, adam("flow")?)?;
    t.rngs = state.rngs;
    t.step = state.step;
    Ok(t)
}

/// The two policies stored in a checkpoint, enough to act without the dataset.
pub struct PolicySnapshot {
    pub step: u64,
    pub config: TrainConfig,
    pub normalizer: Normalizer,
    pub actor: Actor,
    pub flow: FlowPolicy,
}

pub fn load_policies(dir: &Path) -> Result<PolicySnapshot> {
    let state = read_state(dir)?;
    let env = EnvSpec::new(state.config.env_id);
    let (sd, ad) = (env.state_dim, env.action_dim);
    let (spec, params, _) = load_params(dir, "actor")?;
    let actor = Actor::from_net(Mlp::from_params(spec, params)?, sd, ad)?;
    let (spec, params, _) = load_params(dir, "flow")?;
    let flow = FlowPolicy::from_net(Mlp::from_params(spec, params)?, sd, ad, state.config.euler_steps)?;
    Ok(PolicySnapshot {
        step: state.step,
        config: state.config,
        normalizer: state.normalizer,
        actor,
        flow,
    })
}
