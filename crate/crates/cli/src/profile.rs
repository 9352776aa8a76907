//! Performance profiles: the fraction of tasks whose score exceeds each
//! threshold, per algorithm.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::Deserialize;

use crate::Outcome;

#[derive(clap::Args, Debug)]
pub struct ProfileArgs {
    /// CSV with columns task, algorithm, score.
    #[arg(long)]
    pub scores: PathBuf,
    /// Thresholds, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub taus: Vec<f64>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ScoreRow {
    pub task: String,
    pub algorithm: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfilePoint {
    pub algorithm: String,
    pub tau: f64,
    pub fraction: f64,
}

/// Repeated (task, algorithm) rows, e.g. one per seed, are averaged into a
/// single task score before counting.
pub fn profile(rows: &[ScoreRow], taus: &[f64]) -> anyhow::Result<Vec<ProfilePoint>> {
    if rows.is_empty() {
        bail!("scores file has no rows");
    }
    let mut sums: BTreeMap<&str, BTreeMap<&str, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        if !r.score.is_finite() {
            bail!("non-finite score for task {} / {}", r.task, r.algorithm);
        }
        let e = sums.entry(&r.algorithm).or_default().entry(&r.task).or_insert((0.0, 0));
        e.0 += r.score;
        e.1 += 1;
    }
    let mut out = Vec::new();
    for (alg, tasks) in &sums {
        let means: Vec<f64> = tasks.values().map(|(s, n)| s / *n as f64).collect();
        for &tau in taus {
            let above = means.iter().filter(|&&m| m > tau).count();
            out.push(ProfilePoint {
                algorithm: alg.to_string(),
                tau,
                fraction: above as f64 / means.len() as f64,
            });
        }
    }
    Ok(out)
}

pub fn read_scores(path: &std::path::Path) -> anyhow::Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

pub fn write_profile<W: std::io::Write>(out: W, points: &[ProfilePoint]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["algorithm", "tau", "fraction"])?;
    for p in points {
        w.write_record([p.algorithm.clone(), p.tau.to_string(), p.fraction.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_profile(a: ProfileArgs) -> anyhow::Result<Outcome> {
    let rows = read_scores(&a.scores)?;
    let points = profile(&rows, &a.taus)?;
    match &a.out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_profile(file, &points)?;
        }
        None => write_profile(std::io::stdout().lock(), &points)?,
    }
    Ok(Outcome::Success)
}
