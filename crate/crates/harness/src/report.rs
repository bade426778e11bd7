//! Canonical experiment reports: JSON for machines, flat CSV for plotting.
//!
//! Report files are a pure function of (config, seeds); wall-clock timing
//! goes to a separate meta file so reruns are byte-identical.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Method, TaskKind};
use crate::error::Result;

/// Outcome of one seed's full pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Final student metric (after the preference stage when one ran).
    pub student_metric: f64,
    pub ceiling_metric: f64,
    pub weak_metrics: Vec<f64>,
    pub pgr_per_weak: Vec<f64>,
    pub pgr_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dpo_before_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dpo_after_metric: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub task: TaskKind,
    pub method: Method,
    pub aux_loss: bool,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedOutcome>,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub pgr_mean: f64,
    pub pgr_std: f64,
    pub ceiling_mean: f64,
    pub weak_metric_means: Vec<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1); zero for a single observation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl ExperimentReport {
    pub fn aggregate(
        name: String,
        task: TaskKind,
        method: Method,
        aux_loss: bool,
        per_seed: Vec<SeedOutcome>,
    ) -> Self {
        let metrics: Vec<f64> = per_seed.iter().map(|s| s.student_metric).collect();
        let pgrs: Vec<f64> = per_seed.iter().map(|s| s.pgr_mean).collect();
        let ceilings: Vec<f64> = per_seed.iter().map(|s| s.ceiling_metric).collect();
        let n_weak = per_seed.first().map(|s| s.weak_metrics.len()).unwrap_or(0);
        let weak_metric_means = (0..n_weak)
            .map(|i| mean(&per_seed.iter().map(|s| s.weak_metrics[i]).collect::<Vec<_>>()))
            .collect();
        Self {
            name,
            task,
            method,
            aux_loss,
            seeds: per_seed.iter().map(|s| s.seed).collect(),
            metric_mean: mean(&metrics),
            metric_std: std_dev(&metrics),
            pgr_mean: mean(&pgrs),
            pgr_std: std_dev(&pgrs),
            ceiling_mean: mean(&ceilings),
            weak_metric_means,
            per_seed,
        }
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;

        let mut csv = String::new();
        csv.push_str("name,seed,student_metric,ceiling_metric,pgr_mean,dpo_before,dpo_after\n");
        for s in &self.per_seed {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{},{}\n",
                self.name,
                s.seed,
                s.student_metric,
                s.ceiling_metric,
                s.pgr_mean,
                s.dpo_before_metric
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
                s.dpo_after_metric
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
            ));
        }
        csv.push_str(&format!(
            "{},mean,{:.6},{:.6},{:.6},,\n{},std,{:.6},,{:.6},,\n",
            self.name, self.metric_mean, self.ceiling_mean, self.pgr_mean, self.name,
            self.metric_std, self.pgr_std,
        ));
        std::fs::write(dir.join("report.csv"), csv)?;
        Ok(())
    }
}

/// Wall-clock metadata, deliberately outside the canonical report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub runtime_seconds: f64,
}

impl RunMeta {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("run_meta.json"), json + "\n")?;
        Ok(())
    }
}

/// Agreement matrix as a plottable CSV (one row per model).
pub fn write_matrix_csv(path: &Path, names: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "model")?;
    for n in names {
        write!(f, ",{n}")?;
    }
    writeln!(f)?;
    for (name, row) in names.iter().zip(matrix) {
        write!(f, "{name}")?;
        for v in row {
            write!(f, ",{v:.6}")?;
        }
        writeln!(f)?;
    }
    Ok(())
}
