//! Per-step metrics records and their CSV stream.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub vabc_loss: f64,
    pub lambda: f64,
    pub mean_abs_q: f64,
    pub g_mean: f64,
    /// Fraction of guidance weights above each configured threshold.
    pub g_p_gt: Vec<f64>,
    pub eval_score_actor: Option<f64>,
    pub eval_score_vabc: Option<f64>,
}

impl MetricsRecord {
    /// The CSV fields of this record, in header order.
    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = vec![
            self.step.to_string(),
            self.critic_loss.to_string(),
            self.actor_loss.to_string(),
            self.vabc_loss.to_string(),
            self.lambda.to_string(),
            self.mean_abs_q.to_string(),
            self.g_mean.to_string(),
        ];
        out.extend(self.g_p_gt.iter().map(|p| p.to_string()));
        out.push(opt(self.eval_score_actor));
        out.push(opt(self.eval_score_vabc));
        out
    }

    /// Bit-level equality, treating NaNs with equal payloads as equal.
    pub fn bits_eq(&self, other: &MetricsRecord) -> bool {
        let b = |x: f64| x.to_bits();
        let ob = |x: Option<f64>| x.map(f64::to_bits);
        self.step == other.step
            && b(self.critic_loss) == b(other.critic_loss)
            && b(self.actor_loss) == b(other.actor_loss)
            && b(self.vabc_loss) == b(other.vabc_loss)
            && b(self.lambda) == b(other.lambda)
            && b(self.mean_abs_q) == b(other.mean_abs_q)
            && b(self.g_mean) == b(other.g_mean)
            && self.g_p_gt.len() == other.g_p_gt.len()
            && self.g_p_gt.iter().zip(&other.g_p_gt).all(|(x, y)| b(*x) == b(*y))
            && ob(self.eval_score_actor) == ob(other.eval_score_actor)
            && ob(self.eval_score_vabc) == ob(other.eval_score_vabc)
    }
}

pub fn delta_column(delta: f64) -> String {
    format!("g_p_gt_{delta}")
}

pub fn metrics_header(deltas: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "critic_loss",
        "actor_loss",
        "vabc_loss",
        "lambda",
        "mean_abs_q",
        "g_mean",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(deltas.iter().map(|&d| delta_column(d)));
    h.push("eval_score_actor".into());
    h.push("eval_score_vabc".into());
    h
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Streams metrics rows to a CSV file.
pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    /// Starts a fresh file with only the header.
    pub fn create(path: &Path, deltas: &[f64]) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv_writer(file);
        writer.write_record(metrics_header(deltas))?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            writer,
        })
    }

    /// Reopens an existing file keeping only rows with `step <= last_step`.
    pub fn resume(path: &Path, deltas: &[f64], last_step: u64) -> Result<Self> {
        let header = metrics_header(deltas);
        let mut kept: Vec<csv::StringRecord> = Vec::new();
        if path.exists() {
            let mut reader = csv::Reader::from_path(path)?;
            let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
            if found != header {
                return Err(Error::format("metrics header", format!("{} does not match the config", path.display())));
            }
            for rec in reader.records() {
                let rec = rec?;
                let step: u64 = rec
                    .get(0)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::format("metrics step", format!("bad row in {}", path.display())))?;
                if step <= last_step {
                    kept.push(rec);
                }
            }
        }
        let mut w = Self::create(path, deltas)?;
        for rec in &kept {
            w.writer.write_record(rec)?;
        }
        w.flush()?;
        Ok(w)
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.writer.write_record(rec.fields())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics CSV back as raw string rows (header excluded).
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
