//! Single-iteration behavior of the trainer: update order, Bellman targets,
//! guidance weights and logged statistics.

use std::path::Path;

use gfp_core::actor::GuidanceMode;
use gfp_core::critic::{Aggregation, BellmanTarget};
use gfp_core::env::{generate_dataset, BehaviorMix, EnvId, EnvSpec, OfflineDataset};
use gfp_core::kernel::{Matrix, Rng};
use gfp_core::trainer::{streams, Phase, TrainConfig, Trainer, PHASE_ORDER};

fn dataset(env: EnvId, mix: &str) -> OfflineDataset {
    let mix: BehaviorMix = mix.parse().unwrap();
    generate_dataset(&EnvSpec::new(env), 400, &mix, 11).unwrap()
}

fn config(env: EnvId) -> TrainConfig {
    let mut c = TrainConfig::new(env, Path::new("unused"));
    c.batch_size = 32;
    c.hidden_dims = vec![16, 16];
    c.time_embed_dim = 8;
    c.euler_steps = 5;
    c.seed = 5;
    c
}

fn trainer(cfg: TrainConfig, mix: &str) -> Trainer {
    let ds = dataset(cfg.env_id, mix);
    Trainer::new(cfg, ds).unwrap()
}

#[test]
fn each_iteration_runs_critic_then_actor_then_flow() {
    let mut t = trainer(config(EnvId::TwoGoal), "expert=0.5,random=0.5");
    t.step().unwrap();
    assert_eq!(t.last_trace.phases, PHASE_ORDER);
    assert_eq!(t.last_trace.phases[0], Phase::Critic);
}

#[test]
fn unguided_modes_weight_every_row_by_exactly_one() {
    for mode in [GuidanceMode::None, GuidanceMode::BcOnly] {
        let mut cfg = config(EnvId::BanditBimodal);
        cfg.guidance.mode = mode;
        let mut t = trainer(cfg, "low-mode=0.5,expert=0.5");
        for _ in 0..5 {
            let rec = t.step().unwrap();
            assert!(t.last_trace.guidance_weights.iter().all(|g| g.to_bits() == 1f64.to_bits()));
            assert_eq!(rec.g_mean, 1.0);
        }
    }
}

#[test]
fn terminal_transitions_regress_on_the_reward_alone() {
    // Every bandit transition is terminal.
    for target in [BellmanTarget::Standard, BellmanTarget::Vabc] {
        let mut cfg = config(EnvId::BanditBimodal);
        cfg.bellman_target = target;
        let mut t = trainer(cfg, "low-mode=0.5,expert=0.5");
        let batch = t.dataset.batch(&(0..32).collect::<Vec<_>>());
        t.train_step(&batch).unwrap();
        assert_eq!(t.last_trace.critic_targets, batch.rewards);
    }
}

#[test]
fn standard_target_bootstraps_from_target_heads_at_the_actor_action() {
    let mut t = trainer(config(EnvId::LineReach), "expert=0.5,random=0.5");
    let idx: Vec<usize> = (100..132).collect();
    let batch = t.dataset.batch(&idx);
    let before = t.clone_networks();
    t.train_step(&batch).unwrap();

    let mut rng = Rng::new(5, streams::BOOTSTRAP);
    let z = Matrix::from_vec(32, 1, rng.standard_normal(32)).unwrap();
    let a_next = before.actor.sample(&batch.next_states, &z).unwrap();
    let input = Matrix::hcat(&[&batch.next_states, &a_next]).unwrap();
    let q1 = before.critic.target[0].predict(&input, None).unwrap();
    let q2 = before.critic.target[1].predict(&input, None).unwrap();
    for i in 0..32 {
        let q_bar = 0.5 * (q1.get(i, 0) + q2.get(i, 0));
        let want = batch.rewards[i] + (1.0 - batch.terminals[i]) * 0.99 * q_bar;
        let got = t.last_trace.critic_targets[i];
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "row {i}: {got} vs {want}");
    }
}

#[test]
fn vabc_target_averages_actor_and_flow_bootstraps() {
    let mut cfg = config(EnvId::TwoGoal);
    cfg.bellman_target = BellmanTarget::Vabc;
    cfg.aggregation = Aggregation::Min;
    let mut t = trainer(cfg, "expert=0.5,random=0.5");
    let idx: Vec<usize> = (0..32).collect();
    let batch = t.dataset.batch(&idx);
    let before = t.clone_networks();
    t.train_step(&batch).unwrap();

    let mut rng = Rng::new(5, streams::BOOTSTRAP);
    let z = Matrix::from_vec(32, 2, rng.standard_normal(64)).unwrap();
    let q_min = |a: &Matrix| -> Vec<f64> {
        let input = Matrix::hcat(&[&batch.next_states, a]).unwrap();
        let q1 = before.critic.target[0].predict(&input, None).unwrap();
        let q2 = before.critic.target[1].predict(&input, None).unwrap();
        (0..32).map(|i| q1.get(i, 0).min(q2.get(i, 0))).collect()
    };
    let q_actor = q_min(&before.actor.sample(&batch.next_states, &z).unwrap());
    let q_flow = q_min(&before.flow.integrate(&batch.next_states, &z).unwrap());
    for i in 0..32 {
        let want = batch.rewards[i] + (1.0 - batch.terminals[i]) * 0.495 * (q_actor[i] + q_flow[i]);
        let got = t.last_trace.critic_targets[i];
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "row {i}: {got} vs {want}");
    }
}

#[test]
fn logged_tail_fractions_do_not_increase_with_threshold() {
    for mode in [GuidanceMode::Softmax, GuidanceMode::Awr, GuidanceMode::Min] {
        let mut cfg = config(EnvId::TwoGoal);
        cfg.guidance.mode = mode;
        cfg.eta = 0.1;
        let mut t = trainer(cfg, "expert=0.5,random=0.5");
        for _ in 0..10 {
            let rec = t.step().unwrap();
            assert!(rec.g_p_gt.windows(2).all(|w| w[0] >= w[1]), "{mode:?}: {:?}", rec.g_p_gt);
            assert!(t.last_trace.guidance_weights.iter().all(|g| g.is_finite() && *g >= 0.0));
        }
    }
}

#[test]
fn dataset_for_another_environment_is_rejected() {
    let err = Trainer::new(config(EnvId::TwoGoal), dataset(EnvId::LineReach, "expert=1")).err().unwrap();
    assert!(err.to_string().contains("env_id"), "{err}");
}

#[test]
fn non_finite_reward_aborts_with_the_step() {
    let mut t = trainer(config(EnvId::LineReach), "expert=1");
    let mut batch = t.dataset.batch(&(0..32).collect::<Vec<_>>());
    batch.rewards[3] = f64::NAN;
    t.step().unwrap();
    let err = t.train_step(&batch).unwrap_err().to_string();
    assert!(err.contains("step 2"), "{err}");
}

/// Snapshot of the networks before an update.
struct Networks {
    critic: gfp_core::critic::Critic,
    actor: gfp_core::actor::Actor,
    flow: gfp_core::flow::FlowPolicy,
}

trait CloneNetworks {
    fn clone_networks(&self) -> Networks;
}

impl CloneNetworks for Trainer {
    fn clone_networks(&self) -> Networks {
        Networks {
            critic: self.critic.clone(),
            actor: self.actor.clone(),
            flow: self.flow.clone(),
        }
    }
}
