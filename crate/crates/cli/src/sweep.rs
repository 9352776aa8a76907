//! Hyperparameter sweeps over the guidance temperature and the distillation
//! weight. Runs execute in a pool of independent single-threaded trainers.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::Serialize;

use gfp_core::actor::guidance_stats;
use gfp_core::trainer::{train_run, TrainConfig};

use crate::Outcome;

/// Rows drawn from the dataset to summarize the final guidance weights.
pub const PROBE_ROWS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Eta,
    Alpha,
    Both,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    /// Base training config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Temperatures, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eta: Vec<f64>,
    /// Distillation weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Config override applied to every run; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep per-run metrics and checkpoints under this directory.
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
}

/// One point of the sweep grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub eta: f64,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub status: String,
    pub actor_score: Option<f64>,
    pub vabc_score: Option<f64>,
    pub g_mean: Option<f64>,
    pub g_p_gt: Vec<Option<f64>>,
}

fn check_values(name: &str, values: &[f64]) -> anyhow::Result<()> {
    if values.is_empty() {
        bail!("--{name} needs at least one value for this axis");
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        bail!("--{name} values must be positive, got {v}");
    }
    Ok(())
}

/// Expands the sweep grid; axes not swept keep the base config value.
pub fn grid(axis: Axis, base: &TrainConfig, eta: &[f64], alpha: &[f64], seeds: &[u64]) -> anyhow::Result<Vec<SweepPoint>> {
    if seeds.is_empty() {
        bail!("--seeds needs at least one value");
    }
    let etas = match axis {
        Axis::Eta | Axis::Both => {
            check_values("eta", eta)?;
            eta.to_vec()
        }
        Axis::Alpha => vec![base.eta],
    };
    let alphas = match axis {
        Axis::Alpha | Axis::Both => {
            check_values("alpha", alpha)?;
            alpha.to_vec()
        }
        Axis::Eta => vec![base.alpha],
    };
    let mut points = Vec::new();
    for &eta in &etas {
        for &alpha in &alphas {
            for &seed in seeds {
                points.push(SweepPoint { eta, alpha, seed });
            }
        }
    }
    Ok(points)
}

fn run_dir(root: &Path, p: &SweepPoint) -> PathBuf {
    root.join(format!("eta{:e}_alpha{:e}_seed{}", p.eta, p.alpha, p.seed))
}

fn run_point(base: &TrainConfig, p: SweepPoint, runs_dir: Option<&Path>) -> SweepRow {
    let mut cfg = base.clone();
    cfg.eta = p.eta;
    cfg.alpha = p.alpha;
    cfg.seed = p.seed;
    cfg.metrics_path = runs_dir.map(|r| run_dir(r, &p).join("metrics.csv"));
    cfg.checkpoint_path = runs_dir.map(|r| run_dir(r, &p).join("checkpoint"));
    let deltas = cfg.guidance.deltas.clone();
    let outcome = cfg.validate().and_then(|_| {
        let (trainer, summary) = train_run(&cfg, None, false)?;
        let probe = trainer.guidance_probe(PROBE_ROWS, p.seed)?;
        Ok((summary, probe))
    });
    match outcome {
        Ok((summary, probe)) => {
            let g_mean = probe.weights.iter().sum::<f64>() / probe.weights.len() as f64;
            SweepRow {
                point: p,
                status: "ok".into(),
                actor_score: summary.actor.map(|e| e.normalized_score),
                vabc_score: summary.vabc.map(|e| e.normalized_score),
                g_mean: Some(g_mean),
                g_p_gt: guidance_stats(&probe.weights, &deltas).into_iter().map(Some).collect(),
            }
        }
        Err(e) => SweepRow {
            point: p,
            status: format!("failed: {e}"),
            actor_score: None,
            vabc_score: None,
            g_mean: None,
            g_p_gt: vec![None; deltas.len()],
        },
    }
}

/// Worker count: `GFP_THREADS` if set, else the available parallelism.
pub fn pool_size(jobs: usize) -> usize {
    let cap = std::env::var("GFP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    cap.min(jobs).max(1)
}

/// Runs every point; rows arrive in completion order and are returned sorted
/// by (eta, alpha, seed).
pub fn execute(base: &TrainConfig, points: &[SweepPoint], runs_dir: Option<&Path>) -> Vec<SweepRow> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..pool_size(points.len()) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&p) = points.get(i) else { break };
                let row = run_point(base, p, runs_dir);
                eprintln!(
                    "eta {:e} alpha {:e} seed {}: {} actor {:?} vabc {:?}",
                    p.eta, p.alpha, p.seed, row.status, row.actor_score, row.vabc_score
                );
                if tx.send(row).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut rows: Vec<SweepRow> = rx.into_iter().collect();
    rows.sort_by(|a, b| {
        a.point
            .eta
            .total_cmp(&b.point.eta)
            .then(a.point.alpha.total_cmp(&b.point.alpha))
            .then(a.point.seed.cmp(&b.point.seed))
    });
    rows
}

pub fn write_rows<W: std::io::Write>(out: W, deltas: &[f64], rows: &[SweepRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["eta", "alpha", "seed", "status", "actor_score", "vabc_score", "g_mean"]
        .map(String::from)
        .to_vec();
    header.extend(deltas.iter().map(|d| gfp_core::trainer::metrics::delta_column(*d)));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = vec![
            r.point.eta.to_string(),
            r.point.alpha.to_string(),
            r.point.seed.to_string(),
            r.status.clone(),
            opt(r.actor_score),
            opt(r.vabc_score),
            opt(r.g_mean),
        ];
        rec.extend(r.g_p_gt.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_sweep(a: SweepArgs) -> anyhow::Result<Outcome> {
    let base = TrainConfig::load(&a.config, &a.overrides)?;
    let points = grid(a.axis, &base, &a.eta, &a.alpha, &a.seeds)?;
    let rows = execute(&base, &points, a.runs_dir.as_deref());
    let deltas = &base.guidance.deltas;
    match &a.out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_rows(file, deltas, &rows)?;
        }
        None => write_rows(std::io::stdout().lock(), deltas, &rows)?,
    }
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    eprintln!("{} runs, {} failed", rows.len(), failed);
    Ok(Outcome::Success)
}
