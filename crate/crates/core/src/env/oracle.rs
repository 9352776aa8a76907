//! Brute-force reference solutions for the built-in environments.
//!
//! The goal environments are solved on a snapped grid (201 states and 41
//! actions per dimension): a grid state moves to the grid point nearest to
//! its continuous successor, and rewards are evaluated at that grid point.
//! The bandit is solved by maximizing over a 10⁵-point action grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::spec::{bandit_reward, EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::kernel::Rng;

pub const STATES_PER_DIM: usize = 201;
pub const ACTIONS_PER_DIM: usize = 41;
pub const BANDIT_GRID: usize = 100_000;
pub const MC_EPISODES: usize = 100_000;
const VI_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;
const MC_SEED: u64 = 0x5EED_0AC1E;

/// A deterministic grid MDP approximating one of the goal environments.
#[derive(Debug)]
pub struct GridMdp {
    env: EnvSpec,
    dims: usize,
    /// Per-dimension successor index, `[i * ACTIONS_PER_DIM + k]`.
    next: Vec<usize>,
    /// Reward and termination for arriving at each flattened grid state.
    reward: Vec<f64>,
    terminal: Vec<bool>,
}

impl GridMdp {
    pub fn new(env: &EnvSpec) -> Result<Self> {
        if env.id == EnvId::BanditBimodal {
            return Err(Error::invalid("env_id", "the bandit has no state grid"));
        }
        let dims = env.state_dim;
        let scale = env.move_scale();
        let mut next = Vec::with_capacity(STATES_PER_DIM * ACTIONS_PER_DIM);
        for i in 0..STATES_PER_DIM {
            for k in 0..ACTIONS_PER_DIM {
                let x = (grid_coord(i, STATES_PER_DIM) + scale * grid_coord(k, ACTIONS_PER_DIM))
                    .clamp(-1.0, 1.0);
                next.push(nearest_index(x));
            }
        }
        let n_states = STATES_PER_DIM.pow(dims as u32);
        let mut reward = Vec::with_capacity(n_states);
        let mut terminal = Vec::with_capacity(n_states);
        let mut mdp = GridMdp {
            env: env.clone(),
            dims,
            next,
            reward: Vec::new(),
            terminal: Vec::new(),
        };
        for s in 0..n_states {
            let (r, t) = env.arrival(&mdp.state_coords(s));
            reward.push(r);
            terminal.push(t);
        }
        mdp.reward = reward;
        mdp.terminal = terminal;
        Ok(mdp)
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn n_states(&self) -> usize {
        STATES_PER_DIM.pow(self.dims as u32)
    }

    pub fn n_actions(&self) -> usize {
        ACTIONS_PER_DIM.pow(self.dims as u32)
    }

    pub fn state_coords(&self, s: usize) -> Vec<f64> {
        match self.dims {
            1 => vec![grid_coord(s, STATES_PER_DIM)],
            _ => vec![
                grid_coord(s / STATES_PER_DIM, STATES_PER_DIM),
                grid_coord(s % STATES_PER_DIM, STATES_PER_DIM),
            ],
        }
    }

    pub fn action(&self, a: usize) -> Vec<f64> {
        match self.dims {
            1 => vec![grid_coord(a, ACTIONS_PER_DIM)],
            _ => vec![
                grid_coord(a / ACTIONS_PER_DIM, ACTIONS_PER_DIM),
                grid_coord(a % ACTIONS_PER_DIM, ACTIONS_PER_DIM),
            ],
        }
    }

    /// Nearest grid state to a continuous state.
    pub fn nearest_state(&self, s: &[f64]) -> usize {
        match self.dims {
            1 => nearest_index(s[0]),
            _ => nearest_index(s[0]) * STATES_PER_DIM + nearest_index(s[1]),
        }
    }

    /// Nearest grid action to a continuous action.
    pub fn nearest_action(&self, a: &[f64]) -> usize {
        let idx = |x: f64| {
            let f = (x.clamp(-1.0, 1.0) + 1.0) * (ACTIONS_PER_DIM - 1) as f64 / 2.0;
            (f.round() as usize).min(ACTIONS_PER_DIM - 1)
        };
        match self.dims {
            1 => idx(a[0]),
            _ => idx(a[0]) * ACTIONS_PER_DIM + idx(a[1]),
        }
    }

    #[inline]
    pub fn successor(&self, s: usize, a: usize) -> usize {
        match self.dims {
            1 => self.next[s * ACTIONS_PER_DIM + a],
            _ => {
                let (i0, i1) = (s / STATES_PER_DIM, s % STATES_PER_DIM);
                let (k0, k1) = (a / ACTIONS_PER_DIM, a % ACTIONS_PER_DIM);
                self.next[i0 * ACTIONS_PER_DIM + k0] * STATES_PER_DIM
                    + self.next[i1 * ACTIONS_PER_DIM + k1]
            }
        }
    }

    /// `r + (1 − terminal)·γ·V(s')` for taking `a` in `s`.
    #[inline]
    pub fn backup(&self, values: &[f64], s: usize, a: usize, gamma: f64) -> f64 {
        let n = self.successor(s, a);
        if self.terminal[n] {
            self.reward[n]
        } else {
            self.reward[n] + gamma * values[n]
        }
    }

    fn best_backup(&self, values: &[f64], s: usize, gamma: f64) -> f64 {
        (0..self.n_actions())
            .map(|a| self.backup(values, s, a, gamma))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value iteration until the sup-norm change drops below `1e-9`.
    pub fn value_iteration(&self, gamma: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states()];
        loop {
            let next: Vec<f64> = (0..self.n_states())
                .map(|s| self.best_backup(&v, s, gamma))
                .collect();
            let delta = sup_diff(&v, &next);
            v = next;
            if delta < VI_TOL {
                return v;
            }
        }
    }

    /// `horizon`-step backward induction; values are undiscounted returns when
    /// `gamma = 1`.
    pub fn finite_horizon(&self, gamma: f64, horizon: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states()];
        for _ in 0..horizon {
            let next: Vec<f64> = (0..self.n_states())
                .map(|s| self.best_backup(&v, s, gamma))
                .collect();
            let unchanged = next == v;
            v = next;
            if unchanged {
                break;
            }
        }
        v
    }

    /// Values of a fixed grid policy (one action index per grid state).
    pub fn evaluate_policy(&self, policy: &[usize], gamma: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states()];
        loop {
            let next: Vec<f64> = (0..self.n_states())
                .map(|s| self.backup(&v, s, policy[s], gamma))
                .collect();
            let delta = sup_diff(&v, &next);
            v = next;
            if delta < VI_TOL {
                return v;
            }
        }
    }

    /// Greedy action index in `s`. Ties (within `1e-12`) go to the tied
    /// action nearest the centroid of the tied set.
    pub fn greedy(&self, values: &[f64], s: usize, gamma: f64) -> usize {
        let q: Vec<f64> = (0..self.n_actions())
            .map(|a| self.backup(values, s, a, gamma))
            .collect();
        let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..q.len()).filter(|&a| q[a] >= best - TIE_TOL).collect();
        if tied.len() == 1 {
            return tied[0];
        }
        let mut centroid = vec![0.0; self.dims];
        for &a in &tied {
            for (c, x) in centroid.iter_mut().zip(self.action(a)) {
                *c += x / tied.len() as f64;
            }
        }
        let dist = |a: usize| -> f64 {
            self.action(a)
                .iter()
                .zip(&centroid)
                .map(|(x, c)| (x - c).powi(2))
                .sum()
        };
        let mut pick = tied[0];
        let mut pick_dist = dist(pick);
        for &a in &tied[1..] {
            let d = dist(a);
            if d < pick_dist {
                pick = a;
                pick_dist = d;
            }
        }
        pick
    }

    /// Mean of `values` over the grid states covered by the start distribution.
    pub fn start_value(&self, values: &[f64]) -> f64 {
        match self.env.id {
            EnvId::LineReach => values[nearest_index(-1.0)],
            _ => {
                let lo = nearest_index(-0.1);
                let hi = nearest_index(0.1);
                let mut sum = 0.0;
                let mut count = 0usize;
                for i in lo..=hi {
                    for j in lo..=hi {
                        sum += values[i * STATES_PER_DIM + j];
                        count += 1;
                    }
                }
                sum / count as f64
            }
        }
    }
}

#[inline]
pub fn grid_coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

#[inline]
fn nearest_index(x: f64) -> usize {
    let f = (x.clamp(-1.0, 1.0) + 1.0) * (STATES_PER_DIM - 1) as f64 / 2.0;
    (f.round() as usize).min(STATES_PER_DIM - 1)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Optimal values and greedy policy of a grid MDP.
#[derive(Debug)]
pub struct GridSolution {
    pub mdp: GridMdp,
    pub gamma: f64,
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
}

impl GridSolution {
    pub fn solve(env: &EnvSpec, gamma: f64) -> Result<Self> {
        let mdp = GridMdp::new(env)?;
        let values = mdp.value_iteration(gamma);
        let policy = (0..mdp.n_states())
            .map(|s| mdp.greedy(&values, s, gamma))
            .collect();
        Ok(GridSolution {
            mdp,
            gamma,
            values,
            policy,
        })
    }

    /// Greedy action at the grid state nearest to `s`.
    pub fn greedy_action(&self, s: &[f64]) -> Vec<f64> {
        self.mdp.action(self.policy[self.mdp.nearest_state(s)])
    }

    /// `Q^π(s, a)` on the grid for a policy with grid values `v_pi`.
    pub fn q_value(&self, v_pi: &[f64], s: &[f64], a: &[f64]) -> f64 {
        self.mdp.backup(
            v_pi,
            self.mdp.nearest_state(s),
            self.mdp.nearest_action(a),
            self.gamma,
        )
    }
}

type SolutionCache = Mutex<HashMap<(EnvId, u64), Arc<GridSolution>>>;

/// Process-wide memo of grid solutions keyed by `(env, gamma)`.
pub fn grid_solution(env: &EnvSpec, gamma: f64) -> Result<Arc<GridSolution>> {
    static CACHE: OnceLock<SolutionCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (env.id, gamma.to_bits());
    if let Some(sol) = cache.lock().expect("oracle cache").get(&key) {
        return Ok(sol.clone());
    }
    let sol = Arc::new(GridSolution::solve(env, gamma)?);
    cache
        .lock()
        .expect("oracle cache")
        .insert(key, sol.clone());
    Ok(sol)
}

/// Best action on the bandit's 10⁵-point grid.
pub fn bandit_best_action() -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..BANDIT_GRID {
        let a = grid_coord(k, BANDIT_GRID);
        let r = bandit_reward(a);
        if r > best.0 {
            best = (r, a);
        }
    }
    best.1
}

#[derive(Clone, Debug)]
pub enum Greedy {
    Grid(Arc<GridSolution>),
    Bandit(f64),
}

/// Reference returns for score normalization.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub env: EnvId,
    pub gamma: f64,
    pub j_opt: f64,
    pub j_rand: f64,
    pub greedy: Greedy,
}

impl Greedy {
    /// Oracle-greedy policy for `env` (discounted with the env's default gamma).
    pub fn for_env(env: &EnvSpec) -> Result<Self> {
        match env.id {
            EnvId::BanditBimodal => Ok(Greedy::Bandit(bandit_best_action())),
            _ => Ok(Greedy::Grid(grid_solution(env, env.gamma_default)?)),
        }
    }

    pub fn action(&self, s: &[f64]) -> Vec<f64> {
        match self {
            Greedy::Grid(sol) => sol.greedy_action(s),
            Greedy::Bandit(a) => vec![*a],
        }
    }
}

impl OracleResult {
    pub fn greedy_action(&self, s: &[f64]) -> Vec<f64> {
        self.greedy.action(s)
    }
}

/// Monte Carlo return of the uniform-random policy, discounted by `gamma`.
pub fn random_policy_return(env: &EnvSpec, gamma: f64, episodes: usize) -> f64 {
    let mut rng = Rng::new(MC_SEED, env.id as u64);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        let mut discount = 1.0;
        for _ in 0..env.horizon {
            let a: Vec<f64> = (0..env.action_dim)
                .map(|_| rng.uniform_range(-1.0, 1.0))
                .collect();
            let o = env.step(&s, &a);
            total += discount * o.reward;
            if o.terminal {
                break;
            }
            discount *= gamma;
            s = o.next_state[..env.state_dim].to_vec();
        }
    }
    total / episodes as f64
}

/// Discounted optimum by value iteration (bandit: grid maximum) and the
/// uniform policy's discounted return.
pub fn oracle_solve(env: &EnvSpec, gamma: f64) -> Result<OracleResult> {
    match env.id {
        EnvId::BanditBimodal => Ok(bandit_oracle()),
        _ => {
            let sol = grid_solution(env, gamma)?;
            Ok(OracleResult {
                env: env.id,
                gamma,
                j_opt: sol.mdp.start_value(&sol.values),
                j_rand: random_policy_return(env, gamma, MC_EPISODES),
                greedy: Greedy::Grid(sol),
            })
        }
    }
}

fn bandit_oracle() -> OracleResult {
    let mut best = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for k in 0..BANDIT_GRID {
        let r = bandit_reward(grid_coord(k, BANDIT_GRID));
        best = best.max(r);
        sum += r;
    }
    OracleResult {
        env: EnvId::BanditBimodal,
        gamma: 1.0,
        j_opt: best,
        j_rand: sum / BANDIT_GRID as f64,
        greedy: Greedy::Bandit(bandit_best_action()),
    }
}

/// Endpoints on the scale of evaluation returns: undiscounted and truncated at
/// the environment horizon. Memoized per environment.
pub fn episodic_oracle(env: &EnvSpec) -> Result<OracleResult> {
    static CACHE: OnceLock<Mutex<HashMap<EnvId, OracleResult>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(r) = cache.lock().expect("oracle cache").get(&env.id) {
        return Ok(r.clone());
    }
    let result = match env.id {
        EnvId::BanditBimodal => bandit_oracle(),
        _ => {
            let sol = grid_solution(env, env.gamma_default)?;
            let values = sol.mdp.finite_horizon(1.0, env.horizon);
            OracleResult {
                env: env.id,
                gamma: 1.0,
                j_opt: sol.mdp.start_value(&values),
                j_rand: random_policy_return(env, 1.0, MC_EPISODES),
                greedy: Greedy::Grid(sol),
            }
        }
    };
    cache
        .lock()
        .expect("oracle cache")
        .insert(env.id, result.clone());
    Ok(result)
}

/// `100·(J − J_rand)/(J_opt − J_rand)`.
pub fn normalize_score(j: f64, oracle: &OracleResult) -> Result<f64> {
    let span = oracle.j_opt - oracle.j_rand;
    if span.is_nan() || span.abs() < 1e-12 {
        return Err(Error::invalid("oracle", "degenerate oracle: J_opt equals J_rand"));
    }
    Ok(100.0 * (j - oracle.j_rand) / span)
}
