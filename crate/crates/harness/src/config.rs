//! Declarative experiment configuration (TOML) with validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use ws2s_core::bridge::SoftLabelMode;
use ws2s_core::label_types::WeightScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Slotfill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    NaiveMultiweak,
    JointDecoding,
    BayesianMultiweak,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub task: TaskKind,
    pub method: Method,
    #[serde(default)]
    pub aux_loss: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Soft-label construction for the Bayesian generation path
    /// (ablation axis; full scaling by default).
    #[serde(default = "default_soft_mode")]
    pub soft_label_mode: SoftLabelMode,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_soft_mode() -> SoftLabelMode {
    SoftLabelMode::Full
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    #[serde(default = "default_n_weak_train")]
    pub n_weak_train: usize,
    #[serde(default = "default_n_strong_train")]
    pub n_strong_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Classification only.
    #[serde(default = "default_n_features")]
    pub n_features: usize,
}

fn default_n_weak_train() -> usize {
    2000
}
fn default_n_strong_train() -> usize {
    2000
}
fn default_n_test() -> usize {
    500
}
fn default_n_features() -> usize {
    8
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            n_weak_train: default_n_weak_train(),
            n_strong_train: default_n_strong_train(),
            n_test: default_n_test(),
            n_features: default_n_features(),
        }
    }
}

/// Desk-scale defaults for the generation task (smaller corpora).
pub fn slotfill_task_defaults() -> TaskSection {
    TaskSection {
        n_weak_train: 500,
        n_strong_train: 500,
        n_test: 200,
        n_features: default_n_features(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakSection {
    #[serde(default = "default_weak_count")]
    pub count: usize,
    /// Hidden width per teacher; a single entry broadcasts.
    #[serde(default = "default_weak_hidden")]
    pub hidden: Vec<usize>,
    /// Corruption rate per teacher; a single entry broadcasts.
    #[serde(default = "default_weak_noise")]
    pub noise: Vec<f64>,
    #[serde(default = "default_weak_epochs")]
    pub epochs: usize,
    #[serde(default = "default_weighting")]
    pub weighting: WeightScheme,
    /// Raw λᵢ for the fixed scheme (normalized downstream).
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Classification quality band enforced on held-out accuracy.
    #[serde(default = "default_band_lo")]
    pub band_lo: f64,
    #[serde(default = "default_band_hi")]
    pub band_hi: f64,
    /// Disable band enforcement (degenerate single-teacher setups).
    #[serde(default)]
    pub skip_band_check: bool,
}

fn default_weak_count() -> usize {
    5
}
fn default_weak_hidden() -> Vec<usize> {
    vec![6]
}
fn default_weak_noise() -> Vec<f64> {
    vec![0.25]
}
fn default_weak_epochs() -> usize {
    40
}
fn default_weighting() -> WeightScheme {
    WeightScheme::Average
}
fn default_band_lo() -> f64 {
    0.68
}
fn default_band_hi() -> f64 {
    0.75
}

impl Default for WeakSection {
    fn default() -> Self {
        Self {
            count: default_weak_count(),
            hidden: default_weak_hidden(),
            noise: default_weak_noise(),
            epochs: default_weak_epochs(),
            weighting: default_weighting(),
            lambdas: Vec::new(),
            band_lo: default_band_lo(),
            band_hi: default_band_hi(),
            skip_band_check: false,
        }
    }
}

impl WeakSection {
    pub fn hidden_for(&self, i: usize) -> usize {
        if self.hidden.len() == 1 {
            self.hidden[0]
        } else {
            self.hidden[i]
        }
    }

    pub fn noise_for(&self, i: usize) -> f64 {
        if self.noise.len() == 1 {
            self.noise[0]
        } else {
            self.noise[i]
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrongSection {
    #[serde(default = "default_strong_hidden")]
    pub hidden: usize,
    #[serde(default = "default_strong_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Generation only: embedding width and context window.
    #[serde(default = "default_strong_embed")]
    pub embed: usize,
    #[serde(default = "default_strong_window")]
    pub window: usize,
}

fn default_strong_hidden() -> usize {
    32
}
fn default_strong_epochs() -> usize {
    150
}
fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    32
}
fn default_strong_embed() -> usize {
    12
}
fn default_strong_window() -> usize {
    16
}

impl Default for StrongSection {
    fn default() -> Self {
        Self {
            hidden: default_strong_hidden(),
            epochs: default_strong_epochs(),
            learning_rate: default_lr(),
            momentum: default_momentum(),
            batch_size: default_batch(),
            embed: default_strong_embed(),
            window: default_strong_window(),
        }
    }
}

/// Generation-task weak model architecture (strictly below the strong one).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakGenSection {
    #[serde(default = "default_weak_embed")]
    pub embed: usize,
    #[serde(default = "default_weak_window")]
    pub window: usize,
}

fn default_weak_embed() -> usize {
    8
}
fn default_weak_window() -> usize {
    12
}

impl Default for WeakGenSection {
    fn default() -> Self {
        Self {
            embed: default_weak_embed(),
            window: default_weak_window(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "default_gamma_max")]
    pub gamma_max: f64,
    #[serde(default = "default_edl_lambda_max")]
    pub edl_lambda_max: f64,
    /// Fraction of total optimizer steps over which λ_t anneals to its max.
    #[serde(default = "default_anneal_fraction")]
    pub anneal_fraction: f64,
    #[serde(default)]
    pub clamp_lo: f64,
    #[serde(default = "default_clamp_hi")]
    pub clamp_hi: f64,
    /// Generation-mode KL coefficient; defaults to 1/vocab when absent.
    #[serde(default)]
    pub kl_coefficient_gen: Option<f64>,
}

fn default_gamma_max() -> f64 {
    0.5
}
fn default_edl_lambda_max() -> f64 {
    1.0
}
fn default_anneal_fraction() -> f64 {
    0.5
}
fn default_clamp_hi() -> f64 {
    10.0
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            gamma_max: default_gamma_max(),
            edl_lambda_max: default_edl_lambda_max(),
            anneal_fraction: default_anneal_fraction(),
            clamp_lo: 0.0,
            clamp_hi: default_clamp_hi(),
            kl_coefficient_gen: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoSection {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Sequences sampled per prompt (M).
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default = "default_dpo_epochs")]
    pub epochs: usize,
    #[serde(default = "default_dpo_lr")]
    pub learning_rate: f64,
    /// Prompts drawn from the student-training split for pair construction.
    #[serde(default = "default_num_prompts")]
    pub num_prompts: usize,
}

fn default_beta() -> f64 {
    2.0
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_num_samples() -> usize {
    5
}
fn default_dpo_epochs() -> usize {
    2
}
fn default_dpo_lr() -> f64 {
    2e-3
}
fn default_num_prompts() -> usize {
    150
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    #[serde(default = "default_eval_beam")]
    pub beam: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Beam width M for joint decoding.
    #[serde(default = "default_joint_beam")]
    pub joint_beam: usize,
}

fn default_eval_beam() -> usize {
    3
}
fn default_max_len() -> usize {
    24
}
fn default_joint_beam() -> usize {
    5
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            beam: default_eval_beam(),
            max_len: default_max_len(),
            joint_beam: default_joint_beam(),
        }
    }
}

/// A full experiment description, one table per concern.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub task: Option<TaskSection>,
    #[serde(default)]
    pub weak: WeakSection,
    #[serde(default)]
    pub strong: StrongSection,
    #[serde(default)]
    pub weak_gen: WeakGenSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub dpo: Option<DpoSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Effective task sizes (generation defaults are smaller).
    pub fn task_section(&self) -> TaskSection {
        match (&self.task, self.experiment.task) {
            (Some(t), _) => t.clone(),
            (None, TaskKind::Classification) => TaskSection::default(),
            (None, TaskKind::Slotfill) => slotfill_task_defaults(),
        }
    }

    /// Seeds, honoring the `WS2S_SEED` environment override.
    pub fn effective_seeds(&self) -> Vec<u64> {
        if let Ok(v) = std::env::var("WS2S_SEED") {
            if let Ok(seed) = v.trim().parse::<u64>() {
                return vec![seed];
            }
        }
        self.experiment.seeds.clone()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.name.is_empty() {
            return Err(HarnessError::Config("experiment.name is empty".into()));
        }
        if e.seeds.is_empty() {
            return Err(HarnessError::Config("experiment.seeds is empty".into()));
        }
        if self.weak.count == 0 {
            return Err(HarnessError::Config("weak.count must be >= 1".into()));
        }
        if e.method == Method::JointDecoding && e.task != TaskKind::Slotfill {
            return Err(HarnessError::Config(
                "joint_decoding requires task = \"slotfill\"".into(),
            ));
        }
        for v in [self.weak.hidden.len(), self.weak.noise.len()] {
            if v != 1 && v != self.weak.count {
                return Err(HarnessError::Config(format!(
                    "weak.hidden/noise must have 1 or {} entries",
                    self.weak.count
                )));
            }
        }
        if self.weak.weighting == WeightScheme::Fixed
            && !self.weak.lambdas.is_empty()
            && self.weak.lambdas.len() != self.weak.count
        {
            return Err(HarnessError::Config(format!(
                "weak.lambdas must have {} entries",
                self.weak.count
            )));
        }
        if !(0.0..=1.0).contains(&self.schedule.gamma_max) {
            return Err(HarnessError::Config("schedule.gamma_max outside [0, 1]".into()));
        }
        if let Some(d) = &self.dpo {
            if !(0.0..=0.5).contains(&d.epsilon) {
                return Err(HarnessError::Config(
                    "dpo.epsilon outside [0, 0.5]".into(),
                ));
            }
            if d.beta <= 0.0 {
                return Err(HarnessError::Config("dpo.beta must be positive".into()));
            }
            if d.num_samples < 2 {
                return Err(HarnessError::Config(
                    "dpo.num_samples must be at least 2".into(),
                ));
            }
        }
        // capacity asymmetry: the strong model must strictly exceed the weak
        let strong_h = self.strong.hidden;
        for i in 0..self.weak.count {
            if self.weak.hidden_for(i) >= strong_h {
                return Err(HarnessError::Config(format!(
                    "weak.hidden[{i}] must be strictly below strong.hidden"
                )));
            }
        }
        if e.task == TaskKind::Slotfill {
            if self.weak_gen.embed >= self.strong.embed
                || self.weak_gen.window >= self.strong.window
            {
                return Err(HarnessError::Config(
                    "weak_gen.embed/window must be strictly below strong".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A ready-to-run default config for the given task and method.
pub fn default_config(task: TaskKind, method: Method, aux: bool) -> ExperimentConfig {
    let name = format!(
        "{}_{}{}",
        match task {
            TaskKind::Classification => "cls",
            TaskKind::Slotfill => "slot",
        },
        match method {
            Method::Single => "single",
            Method::NaiveMultiweak => "naive",
            Method::JointDecoding => "joint",
            Method::BayesianMultiweak => "bayes",
        },
        if aux { "_aux" } else { "" }
    );
    let strong = match task {
        TaskKind::Classification => StrongSection::default(),
        TaskKind::Slotfill => StrongSection {
            hidden: 48,
            epochs: 25,
            learning_rate: 0.08,
            batch_size: 16,
            ..StrongSection::default()
        },
    };
    ExperimentConfig {
        experiment: ExperimentSection {
            name,
            task,
            method,
            aux_loss: aux,
            seeds: default_seeds(),
            soft_label_mode: SoftLabelMode::Full,
        },
        task: None,
        weak: WeakSection::default(),
        strong,
        weak_gen: WeakGenSection::default(),
        schedule: ScheduleSection::default(),
        decode: DecodeSection::default(),
        dpo: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            [experiment]
            name = "demo"
            task = "classification"
            method = "bayesian_multiweak"
            aux_loss = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.weak.count, 5);
        assert_eq!(cfg.task_section().n_weak_train, 2000);
    }

    #[test]
    fn joint_decoding_rejected_for_classification() {
        let err = ExperimentConfig::from_toml_str(
            r#"
            [experiment]
            name = "bad"
            task = "classification"
            method = "joint_decoding"
            "#,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn capacity_asymmetry_is_enforced() {
        let err = ExperimentConfig::from_toml_str(
            r#"
            [experiment]
            name = "bad"
            task = "classification"
            method = "single"

            [weak]
            count = 1
            hidden = [64]

            [strong]
            hidden = 32
            "#,
        )
        .unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str(
            r#"
            [experiment]
            name = "bad"
            task = "classification"
            method = "single"
            beam_size = 5
            "#,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn slotfill_defaults_are_desk_scale() {
        let cfg = default_config(TaskKind::Slotfill, Method::BayesianMultiweak, true);
        let t = cfg.task_section();
        assert_eq!(
            (t.n_weak_train, t.n_strong_train, t.n_test),
            (500, 500, 200)
        );
    }
}
