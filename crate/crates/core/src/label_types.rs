//! Shared value types for weak labels, evidential parameters and schedules.
//!
//! Everything here is an immutable value after construction; constructors
//! validate the type invariants once so downstream code never re-checks.
//! Probabilities are carried in natural-log domain wherever sequences are
//! involved; linear-domain vectors appear only at interfaces.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::Result;

/// Tolerance for "sums to one" style invariants.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Logit ceiling for the exponential evidence link (α ≈ 1e13 at the clamp).
pub const EVIDENCE_LOGIT_CLAMP: f64 = 30.0;

/// A probability vector over K classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    /// Validates entries in [0, 1] summing to 1 within [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CoreError::DegenerateDistribution("empty vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(CoreError::DegenerateDistribution(format!(
                "entries outside [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CoreError::DegenerateDistribution(format!(
                "sum {sum} deviates from 1 beyond {SUM_TOLERANCE}"
            )));
        }
        Ok(Self { probs })
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Self {
        assert!(k > 0);
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    /// One-hot distribution with mass on `index`.
    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k);
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Index of the single class a label commits to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HardLabel {
    pub class_index: usize,
}

impl HardLabel {
    pub fn new(class_index: usize) -> Self {
        Self { class_index }
    }
}

/// Normalizes a raw non-negative vector into a [`ClassDistribution`].
///
/// Inputs that already sum to one (within float resolution) pass through
/// bit-identically, which makes the function an exact fixed point of itself:
/// normalize(normalize(v)) = normalize(v).
pub fn normalize(raw: &[f64]) -> Result<ClassDistribution> {
    if raw.is_empty() {
        return Err(CoreError::DegenerateDistribution("empty vector".into()));
    }
    if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(CoreError::DegenerateDistribution(format!(
            "negative or non-finite entry in {raw:?}"
        )));
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(CoreError::DegenerateDistribution(
            "all entries are zero".into(),
        ));
    }
    if (sum - 1.0).abs() <= 1e-12 && raw.iter().all(|v| *v <= 1.0) {
        return ClassDistribution::new(raw.to_vec());
    }
    let probs: Vec<f64> = raw.iter().map(|v| (v / sum).min(1.0)).collect();
    ClassDistribution::new(probs)
}

/// Argmax of a distribution; ties break toward the lowest index.
pub fn harden(dist: &ClassDistribution) -> HardLabel {
    let mut best = 0usize;
    for (i, p) in dist.probs().iter().enumerate() {
        if *p > dist.probs()[best] {
            best = i;
        }
    }
    HardLabel::new(best)
}

/// Concentration vector of a Dirichlet prior in the α = evidence + 1
/// parameterization, with the strength α₀ cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    strength: f64,
}

impl DirichletParams {
    /// Requires every concentration ≥ 1 (non-negative evidence).
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(CoreError::InvalidConcentration("empty vector".into()));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 1.0) {
            return Err(CoreError::InvalidConcentration(format!(
                "concentrations must be finite and >= 1, got {alpha:?}"
            )));
        }
        let strength = alpha.iter().sum();
        Ok(Self { alpha, strength })
    }

    /// Builds α = exp(logit) + 1 per class, with the logit clamped at
    /// [`EVIDENCE_LOGIT_CLAMP`] against overflow. The exponential link keeps
    /// evidence non-negative and smooth while letting confident heads grow
    /// α₀ past the vocabulary size at ordinary logit magnitudes.
    pub fn from_logits(logits: &[f64]) -> Self {
        let alpha: Vec<f64> = logits
            .iter()
            .map(|x| x.min(EVIDENCE_LOGIT_CLAMP).exp() + 1.0)
            .collect();
        let strength = alpha.iter().sum();
        Self { alpha, strength }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// α₀ = Σ α_k.
    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Expected categorical distribution α/α₀ under the prior.
    pub fn mean(&self) -> ClassDistribution {
        normalize(&self.alpha).expect("concentrations are positive")
    }
}

/// A weak classifier's vote: committed class plus its full confidence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelClassification {
    pub hard: HardLabel,
    pub confidence: ClassDistribution,
}

impl WeakLabelClassification {
    /// The hard class must attain the confidence maximum (ties break toward it).
    pub fn new(hard: HardLabel, confidence: ClassDistribution) -> Result<Self> {
        if hard.class_index >= confidence.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "hard index {} outside confidence arity {}",
                hard.class_index,
                confidence.len()
            )));
        }
        let max = confidence
            .probs()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if confidence.probs()[hard.class_index] < max {
            return Err(CoreError::ShapeMismatch(format!(
                "hard index {} is not an argmax of {:?}",
                hard.class_index,
                confidence.probs()
            )));
        }
        Ok(Self { hard, confidence })
    }

    /// Confidence of the committed class.
    pub fn max_prob(&self) -> f64 {
        self.confidence.probs()[self.hard.class_index]
    }
}

/// A weak generator's output sequence in the weak tokenizer's id space,
/// with per-token natural-log probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelSequence {
    pub token_ids: Vec<usize>,
    pub token_logprobs: Vec<f64>,
}

impl WeakLabelSequence {
    pub fn new(token_ids: Vec<usize>, token_logprobs: Vec<f64>) -> Result<Self> {
        if token_ids.is_empty() {
            return Err(CoreError::EmptySequence("weak label sequence".into()));
        }
        if token_ids.len() != token_logprobs.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} token ids vs {} log-probs",
                token_ids.len(),
                token_logprobs.len()
            )));
        }
        if token_logprobs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
            return Err(CoreError::ShapeMismatch(
                "log-probabilities must be finite and <= 0".into(),
            ));
        }
        Ok(Self {
            token_ids,
            token_logprobs,
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// One position of a soft sequence label: the bridged target token, its
/// transferred probability, and the remaining mass spread over the rest of
/// the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelPosition {
    pub target_token_id: usize,
    pub target_prob: f64,
    /// Full-arity vector; the entry at `target_token_id` is zero and the
    /// remaining entries sum to 1 − `target_prob`.
    pub off_target: Vec<f64>,
}

impl SoftLabelPosition {
    pub fn new(target_token_id: usize, target_prob: f64, off_target: Vec<f64>) -> Result<Self> {
        if target_token_id >= off_target.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "target id {} outside vocab arity {}",
                target_token_id,
                off_target.len()
            )));
        }
        if !(target_prob > 0.0 && target_prob <= 1.0) {
            return Err(CoreError::DegenerateDistribution(format!(
                "target probability {target_prob} not in (0, 1]"
            )));
        }
        let off_mass: f64 = off_target.iter().sum();
        if (target_prob + off_mass - 1.0).abs() > SUM_TOLERANCE {
            return Err(CoreError::DegenerateDistribution(format!(
                "target {target_prob} + off-target mass {off_mass} deviates from 1"
            )));
        }
        if off_target[target_token_id] != 0.0 {
            return Err(CoreError::DegenerateDistribution(
                "off-target vector must be zero at the target id".into(),
            ));
        }
        Ok(Self {
            target_token_id,
            target_prob,
            off_target,
        })
    }

    /// The full label as a distribution over the vocabulary.
    pub fn to_distribution(&self) -> ClassDistribution {
        let mut v = self.off_target.clone();
        v[self.target_token_id] = self.target_prob;
        normalize(&v).expect("soft label position carries unit mass")
    }
}

/// Per-position soft labels for one bridged sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSequenceLabel {
    pub positions: Vec<SoftLabelPosition>,
}

impl SoftSequenceLabel {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// How per-teacher loss weights λᵢ are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// λᵢ = 1/N.
    Average,
    /// λᵢ fixed up front (e.g. from known teacher quality).
    Fixed,
    /// λᵢ recomputed per sample from teacher confidence.
    Dynamic,
}

/// Normalized per-teacher weights λᵢ under a named scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub scheme: WeightScheme,
    lambdas: Vec<f64>,
}

impl EnsembleWeights {
    /// Non-negative weights are normalized to sum to one.
    pub fn new(scheme: WeightScheme, raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(CoreError::ShapeMismatch("no ensemble weights".into()));
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::ShapeMismatch(format!(
                "weights must be non-negative, got {raw:?}"
            )));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(CoreError::ShapeMismatch("weights sum to zero".into()));
        }
        let lambdas = raw.iter().map(|w| w / sum).collect();
        Ok(Self { scheme, lambdas })
    }

    /// Uniform weights over `n` teachers.
    pub fn average(n: usize) -> Self {
        Self::new(WeightScheme::Average, vec![1.0; n]).expect("n >= 1")
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// A (chosen, rejected) sequence pair with aggregated teacher scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

impl PreferencePair {
    pub fn new(
        chosen: Vec<usize>,
        rejected: Vec<usize>,
        chosen_score: f64,
        rejected_score: f64,
    ) -> Result<Self> {
        if chosen == rejected {
            return Err(CoreError::DegenerateCandidates(
                "chosen and rejected sequences are identical".into(),
            ));
        }
        if chosen_score < rejected_score {
            return Err(CoreError::DegenerateCandidates(format!(
                "chosen score {chosen_score} below rejected score {rejected_score}"
            )));
        }
        Ok(Self {
            chosen,
            rejected,
            chosen_score,
            rejected_score,
        })
    }
}

/// Hyperparameter schedule shared by the training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Ceiling of the self-training weight γ.
    pub gamma_max: f64,
    /// Steps over which γ grows linearly from 0 to `gamma_max`.
    pub total_steps: usize,
    /// Ceiling of the evidential KL coefficient λ.
    pub edl_lambda_max: f64,
    /// Steps over which λ_t grows to `edl_lambda_max`.
    pub anneal_steps: usize,
    /// Extra scaling of the KL penalty in generation mode.
    pub kl_coefficient_gen: f64,
    /// Per-token loss clamp bounds for generation mode.
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl TrainSchedule {
    pub fn new(
        gamma_max: f64,
        total_steps: usize,
        edl_lambda_max: f64,
        anneal_steps: usize,
        kl_coefficient_gen: f64,
        clamp_lo: f64,
        clamp_hi: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma_max) {
            return Err(CoreError::ShapeMismatch(format!(
                "gamma_max {gamma_max} not in [0, 1]"
            )));
        }
        if clamp_lo >= clamp_hi {
            return Err(CoreError::ShapeMismatch(format!(
                "clamp bounds [{clamp_lo}, {clamp_hi}] are not ordered"
            )));
        }
        Ok(Self {
            gamma_max,
            total_steps,
            edl_lambda_max,
            anneal_steps,
            kl_coefficient_gen,
            clamp_lo,
            clamp_hi,
        })
    }

    /// Annealing coefficient λ_t = λ_max · min(1, step/anneal_steps).
    pub fn lambda_t_at(&self, step: usize) -> f64 {
        if self.anneal_steps == 0 {
            return self.edl_lambda_max;
        }
        self.edl_lambda_max * (step as f64 / self.anneal_steps as f64).min(1.0)
    }
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            gamma_max: 0.5,
            total_steps: 1000,
            edl_lambda_max: 1.0,
            anneal_steps: 1000,
            kl_coefficient_gen: 1.0 / 64.0,
            clamp_lo: 0.0,
            clamp_hi: 10.0,
        }
    }
}
