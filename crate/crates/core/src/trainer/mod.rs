//! The training loop: critic, actor and flow updates in a fixed order each
//! iteration, with metrics, periodic evaluation and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;

use std::path::Path;

use crate::actor::{guidance_stats, lambda_scale, mean_abs, Actor, Guidance, GuidanceMode};
use crate::critic::{BellmanTarget, Critic, Which};
use crate::env::{load_dataset, Batch, EnvSpec, OfflineDataset};
use crate::error::{Error, Result};
use crate::flow::{FlowPolicy, FlowTargets};
use crate::kernel::{AdamState, Matrix, Rng};

pub use checkpoint::{load_checkpoint, load_policies, save_checkpoint, PolicySnapshot};
pub use config::{apply_override, DistillTarget, GuidanceConfig, TrainConfig};
pub use eval::{evaluate_policy, ActorPolicy, EvalResult, FlowSampler, GreedyPolicy, Policy, UniformPolicy};
pub use metrics::{metrics_header, read_metrics, MetricsRecord, MetricsWriter};

/// Generator stream ids. Each source of randomness has its own stream so
/// that enabling one feature never shifts another feature's draws.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const FLOW_EPS: u64 = 5;
    pub const FLOW_T: u64 = 6;
    pub const PROBE: u64 = 7;
}

/// Offsets of the evaluation seeds derived from the run seed.
const EVAL_SEED_SALT: u64 = 0xE7A1_5EED;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainRngs {
    pub batch: Rng,
    pub bootstrap: Rng,
    pub policy: Rng,
    pub flow_eps: Rng,
    pub flow_t: Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        TrainRngs {
            batch: Rng::new(seed, streams::BATCH),
            bootstrap: Rng::new(seed, streams::BOOTSTRAP),
            policy: Rng::new(seed, streams::POLICY),
            flow_eps: Rng::new(seed, streams::FLOW_EPS),
            flow_t: Rng::new(seed, streams::FLOW_T),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Critic,
    Actor,
    Flow,
}

pub const PHASE_ORDER: [Phase; 3] = [Phase::Critic, Phase::Actor, Phase::Flow];

/// Debug view of the last iteration.
#[derive(Clone, Debug, Default)]
pub struct StepTrace {
    pub phases: Vec<Phase>,
    pub critic_targets: Vec<f64>,
    pub guidance_weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Actor,
    Vabc,
}

/// Guidance weights of the current networks on a fixed set of dataset rows.
#[derive(Clone, Debug)]
pub struct GuidanceProbe {
    pub lambda: f64,
    pub weights: Vec<f64>,
}

pub fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

pub struct Trainer {
    pub config: TrainConfig,
    pub env: EnvSpec,
    pub dataset: OfflineDataset,
    pub critic: Critic,
    pub actor: Actor,
    pub flow: FlowPolicy,
    /// Slow copy of the flow used as distillation target in `polyak` mode.
    pub flow_target: Option<FlowPolicy>,
    pub adam_critic: [AdamState; 2],
    pub adam_actor: AdamState,
    pub adam_flow: AdamState,
    pub rngs: TrainRngs,
    pub guidance: Guidance,
    pub step: u64,
    pub last_trace: StepTrace,
    /// Print a line to stderr after each evaluation.
    pub log_evals: bool,
}

impl Trainer {
    /// Fresh networks for `config` on an already loaded dataset.
    pub fn new(config: TrainConfig, dataset: OfflineDataset) -> Result<Self> {
        config.validate()?;
        if dataset.env_id != config.env_id {
            return Err(Error::invalid(
                "env_id",
                format!("config says {} but the dataset is {}", config.env_id, dataset.env_id),
            ));
        }
        let env = EnvSpec::new(config.env_id);
        let (sd, ad) = (env.state_dim, env.action_dim);
        let h = &config.hidden_dims;
        let mut init = Rng::new(config.seed, streams::INIT);
        let critic = Critic::new(sd, ad, h, config.aggregation, config.gamma, config.tau, &mut init)?;
        let actor = Actor::new(sd, ad, h, &mut init)?;
        let flow = FlowPolicy::new(sd, ad, h, config.time_embed_dim, config.euler_steps, &mut init)?;
        let flow_target = (config.distill_target == DistillTarget::Polyak).then(|| flow.clone());
        let lr = config.learning_rate;
        Ok(Trainer {
            adam_critic: [
                AdamState::new(&critic.online[0].params, lr),
                AdamState::new(&critic.online[1].params, lr),
            ],
            adam_actor: AdamState::new(&actor.net.params, lr),
            adam_flow: AdamState::new(&flow.net.params, lr),
            rngs: TrainRngs::new(config.seed),
            guidance: config.guidance(),
            env,
            dataset,
            critic,
            actor,
            flow,
            flow_target,
            config,
            step: 0,
            last_trace: StepTrace::default(),
            log_evals: false,
        })
    }

    pub fn from_config(config: TrainConfig) -> Result<Self> {
        let ds = load_dataset(&config.dataset_path)?;
        Self::new(config, ds)
    }

    fn noise(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        mat(rows, cols, rng.standard_normal(rows * cols))
    }

    fn distill_flow(&self) -> &FlowPolicy {
        self.flow_target.as_ref().unwrap_or(&self.flow)
    }

    /// Samples a minibatch and runs one iteration.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let batch = self.dataset.sample(self.config.batch_size, &mut self.rngs.batch)?;
        self.train_step(&batch)
    }

    /// One iteration on `batch`: critic update, actor update, then the
    /// guided flow update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<MetricsRecord> {
        let step = self.step + 1;
        self.train_step_inner(batch).map_err(|e| e.at_step(step))
    }

    fn train_step_inner(&mut self, batch: &Batch) -> Result<MetricsRecord> {
        let b = batch.len();
        let d = self.env.action_dim;
        let mut trace = StepTrace::default();

        // Critic.
        let z_next = Self::noise(&mut self.rngs.bootstrap, b, d);
        let a_next = self.actor.sample(&batch.next_states, &z_next)?;
        let y = match self.config.bellman_target {
            BellmanTarget::Standard => {
                self.critic
                    .target_standard(&batch.rewards, &batch.next_states, &batch.terminals, &a_next)?
            }
            BellmanTarget::Vabc => {
                let a_flow_next = self.flow.integrate(&batch.next_states, &z_next)?;
                self.critic.target_vabc(
                    &batch.rewards,
                    &batch.next_states,
                    &batch.terminals,
                    &a_next,
                    &a_flow_next,
                )?
            }
        };
        let critic_loss = self
            .critic
            .update(&batch.states, &batch.actions, &y, &mut self.adam_critic)?;
        trace.phases.push(Phase::Critic);
        trace.critic_targets = y;

        // Actor.
        let mode = self.guidance.mode;
        let z = Self::noise(&mut self.rngs.policy, b, d);
        let proposal = self.actor.propose(&self.critic, &batch.states, &z, mode.uses_q())?;
        let mean_abs_q = mean_abs(&proposal.q_agg);
        let lambda = lambda_scale(&proposal.q_agg, self.guidance.lambda_floor);
        let a_flow = self.distill_flow().integrate(&batch.states, &z)?;
        let (actor_loss, actor_grads) =
            self.actor
                .loss(&proposal, &a_flow, lambda, self.config.alpha, mode.uses_q())?;
        self.actor.apply(&actor_grads, &mut self.adam_actor)?;
        trace.phases.push(Phase::Actor);

        // Flow.
        let g = match mode {
            GuidanceMode::None | GuidanceMode::BcOnly => vec![1.0; b],
            _ => {
                let q_data = self.critic.q_agg(&batch.states, &batch.actions, Which::Online)?;
                let q_flow = match mode {
                    GuidanceMode::Min => Some(self.critic.q_agg(&batch.states, &a_flow, Which::Online)?),
                    _ => None,
                };
                self.guidance
                    .weights(&q_data, &proposal.q_agg, q_flow.as_deref(), lambda)?
            }
        };
        let eps = Self::noise(&mut self.rngs.flow_eps, b, d);
        let t: Vec<f64> = (0..b).map(|_| self.rngs.flow_t.uniform()).collect();
        let targets = FlowTargets {
            states: &batch.states,
            actions: &batch.actions,
            eps: &eps,
            t: &t,
        };
        let (vabc_loss, flow_grads) = self.flow.weighted_fm_loss(&targets, &g)?;
        crate::kernel::adam_step(&mut self.flow.net.params, &flow_grads, &mut self.adam_flow)?;
        if let Some(ft) = self.flow_target.as_mut() {
            ft.net.params.polyak_from(&self.flow.net.params, self.config.tau)?;
        }
        trace.phases.push(Phase::Flow);

        if trace.phases != PHASE_ORDER {
            return Err(Error::invalid("step order", format!("{:?}", trace.phases)));
        }
        let g_mean = g.iter().sum::<f64>() / b as f64;
        let g_p_gt = guidance_stats(&g, &self.config.guidance.deltas);
        trace.guidance_weights = g;
        self.last_trace = trace;
        self.step += 1;
        Ok(MetricsRecord {
            step: self.step,
            critic_loss,
            actor_loss: actor_loss.total,
            vabc_loss,
            lambda,
            mean_abs_q,
            g_mean,
            g_p_gt,
            eval_score_actor: None,
            eval_score_vabc: None,
        })
    }

    pub fn eval_seed(&self) -> u64 {
        self.config.seed ^ EVAL_SEED_SALT
    }

    pub fn evaluate(&self, kind: PolicyKind, episodes: usize, seed: u64) -> Result<EvalResult> {
        let normalizer = &self.dataset.normalizer;
        match kind {
            PolicyKind::Actor => evaluate_policy(
                &ActorPolicy {
                    actor: &self.actor,
                    normalizer,
                },
                &self.env,
                episodes,
                seed,
            ),
            PolicyKind::Vabc => evaluate_policy(
                &FlowSampler {
                    flow: &self.flow,
                    normalizer,
                },
                &self.env,
                episodes,
                seed,
            ),
        }
    }

    /// Guidance weights on `rows` dataset transitions drawn with a fixed
    /// generator, using the current networks and a λ computed on those rows.
    pub fn guidance_probe(&self, rows: usize, seed: u64) -> Result<GuidanceProbe> {
        let mut rng = Rng::new(seed, streams::PROBE);
        let batch = self.dataset.sample(rows, &mut rng)?;
        let z = Self::noise(&mut rng, rows, self.env.action_dim);
        let p = self.actor.propose(&self.critic, &batch.states, &z, false)?;
        let lambda = lambda_scale(&p.q_agg, self.guidance.lambda_floor);
        let q_data = self.critic.q_agg(&batch.states, &batch.actions, Which::Online)?;
        let q_flow = match self.guidance.mode {
            GuidanceMode::Min => {
                let a_flow = self.distill_flow().integrate(&batch.states, &z)?;
                Some(self.critic.q_agg(&batch.states, &a_flow, Which::Online)?)
            }
            _ => None,
        };
        let weights = self.guidance.weights(&q_data, &p.q_agg, q_flow.as_deref(), lambda)?;
        Ok(GuidanceProbe { lambda, weights })
    }

    fn is_eval_step(&self) -> bool {
        self.step.is_multiple_of(self.config.eval_every) || self.step == self.config.total_steps
    }

    /// Runs until `total_steps`, streaming metrics, evaluating and
    /// checkpointing every `eval_every` steps and at the end.
    pub fn run(&mut self, mut metrics: Option<&mut MetricsWriter>, checkpoint: Option<&Path>) -> Result<RunSummary> {
        let mut last_eval = None;
        if self.step == 0 {
            if let Some(dir) = checkpoint {
                save_checkpoint(self, dir)?;
            }
        }
        while self.step < self.config.total_steps {
            let mut rec = self.step()?;
            if self.is_eval_step() {
                let episodes = self.config.eval_episodes;
                let seed = self.eval_seed();
                let actor = self.evaluate(PolicyKind::Actor, episodes, seed)?;
                let vabc = self.evaluate(PolicyKind::Vabc, episodes, seed)?;
                rec.eval_score_actor = Some(actor.normalized_score);
                rec.eval_score_vabc = Some(vabc.normalized_score);
                if self.log_evals {
                    eprintln!(
                        "step {:>8}  critic {:.4e}  actor score {:7.2}  vabc score {:7.2}",
                        self.step, rec.critic_loss, actor.normalized_score, vabc.normalized_score
                    );
                }
                last_eval = Some((actor, vabc));
                if let Some(w) = metrics.as_deref_mut() {
                    w.write(&rec)?;
                    w.flush()?;
                }
                if let Some(dir) = checkpoint {
                    save_checkpoint(self, dir)?;
                }
            } else if let Some(w) = metrics.as_deref_mut() {
                w.write(&rec)?;
            }
        }
        if let Some(w) = metrics {
            w.flush()?;
        }
        Ok(RunSummary {
            steps: self.step,
            actor: last_eval.as_ref().map(|e| e.0.clone()),
            vabc: last_eval.map(|e| e.1),
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub actor: Option<EvalResult>,
    pub vabc: Option<EvalResult>,
}

/// Trains per `config`, writing metrics and checkpoints to the configured
/// paths. With `resume`, continues from the checkpoint at that path.
pub fn train_run(config: &TrainConfig, resume: Option<&Path>, log_evals: bool) -> Result<(Trainer, RunSummary)> {
    let dataset = load_dataset(&config.dataset_path)?;
    let deltas = &config.guidance.deltas;
    let mut trainer = match resume {
        Some(dir) => load_checkpoint(config.clone(), dataset, dir)?,
        None => Trainer::new(config.clone(), dataset)?,
    };
    trainer.log_evals = log_evals;
    let mut writer = match (&config.metrics_path, resume) {
        (Some(p), Some(_)) => Some(MetricsWriter::resume(p, deltas, trainer.step)?),
        (Some(p), None) => Some(MetricsWriter::create(p, deltas)?),
        (None, _) => None,
    };
    let summary = trainer.run(writer.as_mut(), config.checkpoint_path.as_deref())?;
    Ok((trainer, summary))
}
