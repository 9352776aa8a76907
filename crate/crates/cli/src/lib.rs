//! Command-line surface for dataset generation, training, evaluation,
//! sweeps, performance profiles and gradient checks.

pub mod profile;
pub mod sweep;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gfp_core::env::{generate_dataset, save_dataset, BehaviorMix, EnvId, EnvSpec};
use gfp_core::gradsuite::{default_shapes, suite};
use gfp_core::kernel::gradcheck::corrupt;
use gfp_core::kernel::grad_check;
use gfp_core::trainer::{
    evaluate_policy, load_policies, train_run, ActorPolicy, EvalResult, FlowSampler, TrainConfig,
};

/// Process exit status, per the documented contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success = 0,
    CheckFailed = 1,
}

/// Exit code for an error: numerical aborts are run failures (1); everything
/// else is a usage, config or IO problem (2).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gfp_core::Error>() {
        Some(gfp_core::Error::NonFinite { .. }) => 1,
        _ => 2,
    }
}

#[derive(Parser, Debug)]
#[command(name = "gfp", version, about = "Guided flow policy: offline RL with value-aware flow matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an offline dataset from a behavior-policy mixture.
    Gendata(GendataArgs),
    /// Train actor, flow policy and critic from a config file.
    Train(TrainArgs),
    /// Evaluate a trained policy from a checkpoint.
    Eval(EvalArgs),
    /// Train one run per (eta, alpha, seed) combination and collect scores.
    Sweep(sweep::SweepArgs),
    /// Fraction of tasks above each score threshold, per algorithm.
    Profile(profile::ProfileArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args, Debug)]
pub struct GendataArgs {
    #[arg(long)]
    pub env: EnvId,
    /// Number of transitions.
    #[arg(long)]
    pub n: usize,
    /// Behavior weights, e.g. `low-mode=0.5,expert=0.5`.
    #[arg(long)]
    pub mix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Config override `key.path=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from the checkpoint at the configured checkpoint path.
    #[arg(long)]
    pub resume: bool,
    /// Run directory used for any output path the config leaves unset.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    Actor,
    Vabc,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Run directory (containing `checkpoint/`) or a checkpoint directory.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Actor)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Double one analytic gradient entry per problem; the check must fail.
    #[arg(long)]
    pub corrupt: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Gendata(a) => gendata(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep::run_sweep(a),
        Command::Profile(a) => profile::run_profile(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn gendata(a: GendataArgs) -> anyhow::Result<Outcome> {
    let mix: BehaviorMix = a.mix.parse()?;
    mix.validate(a.env)?;
    let env = EnvSpec::new(a.env);
    let ds = generate_dataset(&env, a.n, &mix, a.seed)?;
    save_dataset(&ds, &a.out)?;
    let terminals = ds.terminal.iter().filter(|&&t| t == 1).count();
    eprintln!(
        "wrote {} transitions ({} terminal) for {} to {}",
        ds.len(),
        terminals,
        a.env,
        a.out.display()
    );
    print_json(&serde_json::json!({
        "env_id": a.env,
        "n": ds.len(),
        "seed": a.seed,
        "mix": ds.mix,
        "state_mean": ds.normalizer.mean,
        "state_std": ds.normalizer.std,
        "out": a.out,
    }));
    Ok(Outcome::Success)
}

fn train(a: TrainArgs) -> anyhow::Result<Outcome> {
    let mut cfg = TrainConfig::load(&a.config, &a.overrides)?;
    if cfg.checkpoint_path.is_none() {
        cfg.checkpoint_path = Some(a.out.join("checkpoint"));
    }
    if cfg.metrics_path.is_none() {
        cfg.metrics_path = Some(a.out.join("metrics.csv"));
    }
    let resume = a.resume.then(|| cfg.checkpoint_path.clone().expect("set above"));
    if let Some(dir) = &resume {
        if !dir.exists() {
            bail!("no checkpoint to resume at {}", dir.display());
        }
    }
    eprintln!(
        "training {} for {} steps (seed {}, guidance {}, eta {}, alpha {})",
        cfg.env_id,
        cfg.total_steps,
        cfg.seed,
        cfg.guidance.mode.name(),
        cfg.eta,
        cfg.alpha
    );
    let (_, summary) = train_run(&cfg, resume.as_deref(), true)?;
    let score = |e: &Option<EvalResult>| e.as_ref().map(|r| r.normalized_score);
    eprintln!(
        "final normalized scores: actor {:?}, vabc {:?}",
        score(&summary.actor),
        score(&summary.vabc)
    );
    print_json(&serde_json::json!({
        "steps": summary.steps,
        "actor": summary.actor,
        "vabc": summary.vabc,
        "metrics_path": cfg.metrics_path,
        "checkpoint_path": cfg.checkpoint_path,
    }));
    Ok(Outcome::Success)
}

fn checkpoint_dir(run: &Path) -> anyhow::Result<PathBuf> {
    for dir in [run.to_path_buf(), run.join("checkpoint")] {
        if dir.join(gfp_core::trainer::checkpoint::STATE_FILE).exists() {
            return Ok(dir);
        }
    }
    bail!("no checkpoint found in {}", run.display())
}

#[derive(Serialize)]
struct EvalReport {
    policy: PolicyArg,
    episodes: usize,
    mean_return: f64,
    normalized_score: f64,
}

fn eval(a: EvalArgs) -> anyhow::Result<Outcome> {
    let dir = checkpoint_dir(&a.run)?;
    let snap = load_policies(&dir).with_context(|| format!("loading {}", dir.display()))?;
    let env = EnvSpec::new(snap.config.env_id);
    let result = match a.policy {
        PolicyArg::Actor => evaluate_policy(
            &ActorPolicy {
                actor: &snap.actor,
                normalizer: &snap.normalizer,
            },
            &env,
            a.episodes,
            a.seed,
        )?,
        PolicyArg::Vabc => evaluate_policy(
            &FlowSampler {
                flow: &snap.flow,
                normalizer: &snap.normalizer,
            },
            &env,
            a.episodes,
            a.seed,
        )?,
    };
    eprintln!("checkpoint step {}: {:?} normalized score {:.2}", snap.step, a.policy, result.normalized_score);
    print_json(&EvalReport {
        policy: a.policy,
        episodes: result.episodes,
        mean_return: result.mean_return,
        normalized_score: result.normalized_score,
    });
    Ok(Outcome::Success)
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<Outcome> {
    if a.tolerance.is_nan() || a.tolerance <= 0.0 {
        bail!("--tolerance must be positive");
    }
    let mut all_passed = true;
    let mut rows = Vec::new();
    for problem in suite(&default_shapes(), a.seed)? {
        let problem = if a.corrupt { corrupt(problem) } else { problem };
        let report = grad_check(&problem, a.tolerance)?;
        eprint!("{report}");
        all_passed &= report.passed();
        rows.push(serde_json::json!({
            "name": report.name,
            "max_rel_err": report.max_rel_err(),
            "passed": report.passed(),
        }));
    }
    print_json(&serde_json::json!({
        "tolerance": a.tolerance,
        "passed": all_passed,
        "problems": rows,
    }));
    Ok(if all_passed {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}
