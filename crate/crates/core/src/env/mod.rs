pub mod dataset;
pub mod oracle;
pub mod spec;

pub use dataset::{
    generate_dataset, load_dataset, sample_minibatch, save_dataset, Batch, Behavior, BehaviorMix,
    Normalizer, OfflineDataset,
};
pub use oracle::{episodic_oracle, normalize_score, oracle_solve, Greedy, GridMdp, GridSolution, OracleResult};
pub use spec::{bandit_reward, EnvId, EnvSpec, StepOutcome};
