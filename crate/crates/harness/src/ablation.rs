//! Named ablation grids mirroring the soft-label construction study, the
//! teacher-weighting study, and the joint-decoding beam-size study, all at
//! desk scale.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ws2s_core::bridge::SoftLabelMode;
use ws2s_core::label_types::WeightScheme;

use crate::config::{default_config, ExperimentConfig, Method, TaskKind};
use crate::error::{HarnessError, Result};
use crate::experiment::run_experiment;
use crate::report::ExperimentReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub pgr_mean: f64,
    pub pgr_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationBundle {
    pub suite: String,
    pub rows: Vec<AblationRow>,
}

/// Shared base: a reduced slotfill run so a 3-row grid stays inside the
/// desk-scale budget.
fn ablation_base(method: Method) -> ExperimentConfig {
    let mut cfg = default_config(TaskKind::Slotfill, method, true);
    cfg.weak.count = 3;
    cfg.task = Some(crate::config::TaskSection {
        n_weak_train: 300,
        n_strong_train: 300,
        n_test: 120,
        n_features: 8,
    });
    cfg
}

fn row_from(label: &str, report: &ExperimentReport) -> AblationRow {
    AblationRow {
        label: label.to_string(),
        metric_mean: report.metric_mean,
        metric_std: report.metric_std,
        pgr_mean: report.pgr_mean,
        pgr_std: report.pgr_std,
    }
}

/// Runs a named suite and writes per-row reports plus a summary bundle.
pub fn ablation_suite(name: &str, out_dir: &Path) -> Result<AblationBundle> {
    let rows: Vec<(String, ExperimentConfig)> = match name {
        "soft_label_stages" => [
            ("one_hot", SoftLabelMode::OneHot),
            ("target_prob_only", SoftLabelMode::TargetProbUniform),
            ("full_soft_label", SoftLabelMode::Full),
        ]
        .into_iter()
        .map(|(label, mode)| {
            let mut cfg = ablation_base(Method::BayesianMultiweak);
            cfg.experiment.name = format!("soft_label_{label}");
            cfg.experiment.soft_label_mode = mode;
            (label.to_string(), cfg)
        })
        .collect(),
        "weight_schemes" => [
            ("average", WeightScheme::Average),
            ("dynamic", WeightScheme::Dynamic),
            ("fixed", WeightScheme::Fixed),
        ]
        .into_iter()
        .map(|(label, scheme)| {
            let mut cfg = ablation_base(Method::BayesianMultiweak);
            cfg.experiment.name = format!("weights_{label}");
            cfg.weak.weighting = scheme;
            if scheme == WeightScheme::Fixed {
                // teachers are ordered by increasing corruption; weight the
                // cleaner ones more, mirroring performance-informed weights
                cfg.weak.noise = vec![0.22, 0.30, 0.38];
                cfg.weak.lambdas = vec![0.45, 0.33, 0.22];
            }
            (label.to_string(), cfg)
        })
        .collect(),
        "beam_sizes" => [3usize, 5, 10]
            .into_iter()
            .map(|m| {
                let mut cfg = ablation_base(Method::JointDecoding);
                cfg.experiment.name = format!("joint_beam_{m}");
                cfg.decode.joint_beam = m;
                (format!("M={m}"), cfg)
            })
            .collect(),
        other => return Err(HarnessError::UnknownSuite(other.to_string())),
    };

    let mut bundle = AblationBundle {
        suite: name.to_string(),
        rows: Vec::new(),
    };
    for (label, cfg) in rows {
        let row_dir = out_dir.join(&cfg.experiment.name);
        let report = run_experiment(&cfg, &row_dir)?;
        bundle.rows.push(row_from(&label, &report));
    }

    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(&bundle)?;
    std::fs::write(out_dir.join("ablation.json"), json + "\n")?;
    let mut csv = String::from("label,metric_mean,metric_std,pgr_mean,pgr_std\n");
    for r in &bundle.rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.label, r.metric_mean, r.metric_std, r.pgr_mean, r.pgr_std
        ));
    }
    std::fs::write(out_dir.join("ablation.csv"), csv)?;
    Ok(bundle)
}
