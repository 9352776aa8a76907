//! Environment dynamics, offline datasets and the grid oracle.

use gfp_core::env::oracle::{grid_coord, STATES_PER_DIM};
use gfp_core::env::{
    bandit_reward, episodic_oracle, generate_dataset, normalize_score, BehaviorMix, EnvId, EnvSpec, GridMdp,
};
use gfp_core::kernel::Rng;
use proptest::prelude::*;

fn env_id() -> impl Strategy<Value = EnvId> {
    prop_oneof![Just(EnvId::LineReach), Just(EnvId::TwoGoal), Just(EnvId::BanditBimodal)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn steps_stay_in_the_box_with_bounded_reward(
        id in env_id(),
        s in prop::array::uniform2(-1.0f64..=1.0),
        a in prop::array::uniform2(-5.0f64..5.0),
    ) {
        let env = EnvSpec::new(id);
        let out = env.step(&s[..env.state_dim], &a[..env.action_dim]);
        prop_assert!(out.next_state.iter().all(|x| (-1.0..=1.0).contains(x)));
        prop_assert!((0.0..=1.0).contains(&out.reward));
        if out.reward > 0.0 && id != EnvId::BanditBimodal {
            prop_assert!(out.terminal);
        }
    }

    #[test]
    fn out_of_range_actions_act_like_their_clipped_value(id in env_id(), s in prop::array::uniform2(-1.0f64..=1.0), a in prop::array::uniform2(-5.0f64..5.0)) {
        let env = EnvSpec::new(id);
        let clipped = a.map(|x| x.clamp(-1.0, 1.0));
        prop_assert_eq!(env.step(&s[..env.state_dim], &a[..env.action_dim]), env.step(&s[..env.state_dim], &clipped[..env.action_dim]));
    }

    #[test]
    fn bandit_reward_peaks_at_the_high_mode(a in -1.0f64..=1.0) {
        prop_assert!(bandit_reward(a) <= bandit_reward(0.7));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn stored_transitions_follow_the_dynamics(id in env_id(), seed in 0u64..1000) {
        let env = EnvSpec::new(id);
        let mix: BehaviorMix = match id {
            EnvId::LineReach => "expert=0.3,noisy-expert=0.3,random=0.4",
            _ => "expert=0.3,noisy-expert=0.2,random=0.2,low-mode=0.3",
        }
        .parse()
        .unwrap();
        let ds = generate_dataset(&env, 300, &mix, seed).unwrap();
        for i in 0..ds.len() {
            let (s, a) = (ds.state(i), ds.action(i));
            prop_assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
            let out = env.step(&s, &a);
            prop_assert!((out.reward - ds.r[i] as f64).abs() <= 1e-6);
            prop_assert_eq!(out.terminal, ds.terminal[i] == 1);
            for k in 0..env.state_dim {
                let stored = ds.s_next[i * env.state_dim + k] as f64;
                prop_assert!((out.next_state[k] - stored).abs() <= 1e-6, "row {} dim {}", i, k);
            }
        }
    }

    #[test]
    fn optimal_values_dominate_any_fixed_policy(seed in any::<u64>()) {
        let mdp = GridMdp::new(&EnvSpec::new(EnvId::LineReach)).unwrap();
        let v_star = mdp.value_iteration(0.99);
        let mut rng = Rng::new(seed, 0);
        let policy: Vec<usize> = (0..mdp.n_states()).map(|_| rng.index(mdp.n_actions())).collect();
        let v_pi = mdp.evaluate_policy(&policy, 0.99);
        for s in 0..mdp.n_states() {
            prop_assert!(v_pi[s] <= v_star[s] + 1e-9, "state {}", s);
        }
    }
}

#[test]
fn optimal_values_satisfy_the_bellman_optimality_equation() {
    let mdp = GridMdp::new(&EnvSpec::new(EnvId::LineReach)).unwrap();
    let v = mdp.value_iteration(0.99);
    for s in 0..mdp.n_states() {
        let best = (0..mdp.n_actions())
            .map(|a| mdp.backup(&v, s, a, 0.99))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - v[s]).abs() < 1e-9, "state {s}: {best} vs {}", v[s]);
    }
}

#[test]
fn line_reach_values_match_shortest_paths() {
    // From x, the goal band [0.75, 0.85] is ceil((0.75 − x)/0.2) unit steps
    // away, and the arrival reward is discounted by γ^(steps − 1).
    let mdp = GridMdp::new(&EnvSpec::new(EnvId::LineReach)).unwrap();
    let v = mdp.value_iteration(0.9);
    for i in (0..STATES_PER_DIM).step_by(10) {
        let x = grid_coord(i, STATES_PER_DIM);
        if (x - 0.8).abs() <= 0.05 {
            continue;
        }
        let dist = if x < 0.75 { 0.75 - x } else { x - 0.85 };
        let steps = (dist / 0.2 - 1e-9).ceil().max(1.0);
        let want = 0.9f64.powf(steps - 1.0);
        assert!((v[i] - want).abs() < 1e-9, "x = {x}: {} vs {want}", v[i]);
    }
}

#[test]
fn episodic_oracle_brackets_random_and_optimal() {
    for id in [EnvId::LineReach, EnvId::BanditBimodal] {
        let o = episodic_oracle(&EnvSpec::new(id)).unwrap();
        assert!(o.j_opt > o.j_rand, "{id}");
        assert!((normalize_score(o.j_opt, &o).unwrap() - 100.0).abs() < 1e-9);
        assert!(normalize_score(o.j_rand, &o).unwrap().abs() < 1e-9);
    }
}
