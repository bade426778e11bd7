use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{chain_evidence, ClassifierModel, GeneratorModel, HeadMode};
use crate::bridge::{BridgedSequence, SoftLabelMode};
use crate::error::CoreError;
use crate::label_types::{
    harden, ClassDistribution, DirichletParams, EnsembleWeights, HardLabel, TrainSchedule,
    WeakLabelClassification,
};
use crate::losses::{
    self, cross_entropy, gamma_at, mix_aux, weighted_multiweak_edl_loss, GenEdlOptions, LossValue,
    Target,
};
use crate::numeric::softmax;
use crate::Result;

/// One classification training sample.
#[derive(Debug, Clone)]
pub struct ClassificationSample {
    pub features: Vec<f64>,
    pub supervision: Supervision,
}

/// Labels attached to a classification sample.
#[derive(Debug, Clone)]
pub enum Supervision {
    /// Ground truth (weak-teacher and ceiling training).
    Truth(HardLabel),
    /// Votes from N weak teachers with per-sample loss weights.
    Weak {
        labels: Vec<WeakLabelClassification>,
        weights: EnsembleWeights,
    },
}

impl Supervision {
    /// Reference class for diagnostics (truth, or the first teacher's vote).
    fn reference_class(&self) -> usize {
        match self {
            Supervision::Truth(h) => h.class_index,
            Supervision::Weak { labels, .. } => labels[0].hard.class_index,
        }
    }
}

/// Which objective drives classifier training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierLossKind {
    /// Plain cross-entropy against ground truth.
    CrossEntropy,
    /// Weighted sum of per-teacher cross-entropies.
    NaiveMultiweak,
    /// Weighted evidential loss over teacher probability assignments.
    WeightedEdl,
}

/// Classifier objective plus its schedule.
#[derive(Debug, Clone)]
pub struct ClassifierLossSpec {
    pub kind: ClassifierLossKind,
    pub schedule: TrainSchedule,
    /// Enable the γ-weighted self-training mix.
    pub aux: bool,
}

/// Schedule state resolved for one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct LossState {
    pub gamma: f64,
    pub lambda_t: f64,
}

impl LossState {
    pub fn at_step(spec_aux: bool, schedule: &TrainSchedule, step: usize) -> Self {
        let gamma = if spec_aux {
            gamma_at(step.min(schedule.total_steps), schedule).unwrap_or(0.0)
        } else {
            0.0
        };
        Self {
            gamma,
            lambda_t: schedule.lambda_t_at(step),
        }
    }
}

fn check_finite(value: f64, sample_index: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(CoreError::NonFiniteLoss {
            sample_index,
            detail: format!("loss value {value}"),
        })
    }
}

/// Per-sample classifier loss with gradient in the logits.
fn classifier_sample_loss(
    model: &ClassifierModel,
    sample: &ClassificationSample,
    kind: ClassifierLossKind,
    state: LossState,
) -> Result<(Vec<f64>, Vec<f64>, LossValue)> {
    let (hidden, logits) = model.forward_cached(&sample.features)?;
    let weak_term = match (kind, &sample.supervision) {
        (ClassifierLossKind::CrossEntropy, Supervision::Truth(h)) => {
            cross_entropy(&logits, &Target::Hard(*h))?
        }
        (ClassifierLossKind::CrossEntropy, Supervision::Weak { labels, weights })
        | (ClassifierLossKind::NaiveMultiweak, Supervision::Weak { labels, weights }) => {
            let hard: Vec<HardLabel> = labels.iter().map(|l| l.hard).collect();
            losses::naive_multiweak_loss(&logits, &hard, weights)?
        }
        (ClassifierLossKind::NaiveMultiweak, Supervision::Truth(h)) => {
            cross_entropy(&logits, &Target::Hard(*h))?
        }
        (ClassifierLossKind::WeightedEdl, Supervision::Weak { labels, weights }) => {
            let alpha = DirichletParams::from_logits(&logits);
            let assignments: Vec<ClassDistribution> =
                labels.iter().map(|l| l.confidence.clone()).collect();
            let in_alpha =
                weighted_multiweak_edl_loss(&alpha, &assignments, weights, state.lambda_t, None)?;
            LossValue {
                value: in_alpha.value,
                grad: chain_evidence(&in_alpha.grad, &logits),
            }
        }
        (ClassifierLossKind::WeightedEdl, Supervision::Truth(h)) => {
            let alpha = DirichletParams::from_logits(&logits);
            let in_alpha = losses::edl_loss(&alpha, *h, state.lambda_t)?;
            LossValue {
                value: in_alpha.value,
                grad: chain_evidence(&in_alpha.grad, &logits),
            }
        }
    };
    let total = if state.gamma > 0.0 {
        let self_term = match (kind, model.config.head) {
            (ClassifierLossKind::WeightedEdl, _) | (_, HeadMode::Edl) => {
                let alpha = DirichletParams::from_logits(&logits);
                let own = harden(&alpha.mean());
                let in_alpha = losses::edl_loss(&alpha, own, state.lambda_t)?;
                LossValue {
                    value: in_alpha.value,
                    grad: chain_evidence(&in_alpha.grad, &logits),
                }
            }
            _ => {
                let own = harden(&ClassDistribution::new(softmax(&logits))?);
                cross_entropy(&logits, &Target::Hard(own))?
            }
        };
        mix_aux(&weak_term, &self_term, state.gamma)?
    } else {
        weak_term
    };
    Ok((sample.features.clone(), hidden, total))
}

/// Mean loss and mean parameter gradient over a classifier batch.
pub fn classifier_gradients(
    model: &ClassifierModel,
    batch: &[ClassificationSample],
    kind: ClassifierLossKind,
    state: LossState,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(CoreError::EmptySequence("empty batch".into()));
    }
    let mut grad = vec![0.0; model.parameter_count()];
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let (features, hidden, loss) = classifier_sample_loss(model, sample, kind, state)?;
        check_finite(loss.value, i)?;
        total += loss.value;
        model.backward(&features, &hidden, &loss.grad, &mut grad);
    }
    let n = batch.len() as f64;
    for g in grad.iter_mut() {
        *g /= n;
    }
    Ok((total / n, grad))
}

/// One generation training sample: prompt tokens plus supervision.
#[derive(Debug, Clone)]
pub struct GenerationSample {
    pub prompt: Vec<usize>,
    pub supervision: GenSupervision,
}

/// Supervision attached to a generation sample.
#[derive(Debug, Clone)]
pub enum GenSupervision {
    /// Ground-truth target tokens (ceiling training, joint-decoded target).
    Truth(Vec<usize>),
    /// One target sequence per weak teacher, token-level cross-entropy.
    WeakSequences {
        targets: Vec<Vec<usize>>,
        weights: EnsembleWeights,
    },
    /// Word-bridged targets; soft labels are rebuilt from the current model
    /// at every step.
    Bridged {
        sequences: Vec<BridgedSequence>,
        weights: EnsembleWeights,
    },
}

/// Which objective drives generator training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLossKind {
    /// Token-level cross-entropy on a single target.
    CrossEntropy,
    /// Per-teacher teacher-forced cross-entropy, length-normalized.
    NaiveMultiweak,
    /// Evidential loss on bridged soft labels.
    BayesianEdl,
}

/// Generator objective plus its schedule and soft-label construction mode.
#[derive(Debug, Clone)]
pub struct GeneratorLossSpec {
    pub kind: GeneratorLossKind,
    pub schedule: TrainSchedule,
    pub aux: bool,
    /// How bridged per-token labels are materialized (ablation axis).
    pub soft_mode: SoftLabelMode,
}

/// Teacher-forced pass over `target`, applying `per_step` to each cached step.
fn teacher_forced<F>(
    model: &GeneratorModel,
    prompt: &[usize],
    target: &[usize],
    mut per_step: F,
) -> Result<()>
where
    F: FnMut(usize, &[usize], &[f64], &[f64], &[f64]) -> Result<()>,
{
    for (j, _) in target.iter().enumerate() {
        let window = model.window_ids(prompt, &target[..j])?;
        let (x, hidden, logits) = model.forward_window(&window);
        per_step(j, &window, &x, &hidden, &logits)?;
    }
    Ok(())
}

/// Per-token cross-entropy term with optional self-training mix.
fn gen_ce_step(logits: &[f64], token: usize, gamma: f64) -> Result<LossValue> {
    if gamma > 0.0 {
        losses::aux_confidence_loss(
            logits,
            &Target::Hard(HardLabel::new(token)),
            gamma,
            losses::AuxBase::CrossEntropy,
        )
    } else {
        cross_entropy(logits, &Target::Hard(HardLabel::new(token)))
    }
}

/// Mean loss and mean parameter gradient over a generator batch.
pub fn generator_gradients(
    model: &GeneratorModel,
    batch: &[GenerationSample],
    spec: &GeneratorLossSpec,
    state: LossState,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(CoreError::EmptySequence("empty batch".into()));
    }
    let gen_opts = GenEdlOptions::from_schedule(&spec.schedule);
    let single = EnsembleWeights::average(1);
    let mut grad = vec![0.0; model.parameter_count()];
    let mut total = 0.0;

    for (si, sample) in batch.iter().enumerate() {
        let mut sample_loss = 0.0;
        match (&sample.supervision, spec.kind) {
            (GenSupervision::Truth(target), _) => {
                if target.is_empty() {
                    return Err(CoreError::EmptySequence("target sequence".into()));
                }
                let scale = 1.0 / target.len() as f64;
                teacher_forced(model, &sample.prompt, target, |j, window, x, hidden, logits| {
                    let term = gen_ce_step(logits, target[j], state.gamma)?;
                    sample_loss += scale * term.value;
                    let g: Vec<f64> = term.grad.iter().map(|g| scale * g).collect();
                    model.backward_step(window, x, hidden, &g, &mut grad);
                    Ok(())
                })?;
            }
            (GenSupervision::WeakSequences { targets, weights }, _) => {
                if targets.len() != weights.len() {
                    return Err(CoreError::ShapeMismatch(format!(
                        "{} targets vs {} weights",
                        targets.len(),
                        weights.len()
                    )));
                }
                for (target, lambda) in targets.iter().zip(weights.lambdas()) {
                    if target.is_empty() {
                        return Err(CoreError::EmptySequence("weak target sequence".into()));
                    }
                    let scale = lambda / target.len() as f64;
                    teacher_forced(
                        model,
                        &sample.prompt,
                        target,
                        |j, window, x, hidden, logits| {
                            let term = gen_ce_step(logits, target[j], state.gamma)?;
                            sample_loss += scale * term.value;
                            let g: Vec<f64> = term.grad.iter().map(|g| scale * g).collect();
                            model.backward_step(window, x, hidden, &g, &mut grad);
                            Ok(())
                        },
                    )?;
                }
            }
            (GenSupervision::Bridged { sequences, weights }, _) => {
                if sequences.len() != weights.len() {
                    return Err(CoreError::ShapeMismatch(format!(
                        "{} bridged sequences vs {} weights",
                        sequences.len(),
                        weights.len()
                    )));
                }
                for (bridged, lambda) in sequences.iter().zip(weights.lambdas()) {
                    let target = bridged.piece_ids();
                    if target.is_empty() {
                        return Err(CoreError::EmptySequence("bridged sequence".into()));
                    }
                    let scale = lambda / target.len() as f64;
                    // The soft labels depend on the model's own per-step
                    // confidence, so the whole sequence is forwarded first.
                    let mut caches = Vec::with_capacity(target.len());
                    teacher_forced(
                        model,
                        &sample.prompt,
                        &target,
                        |_, window, x, hidden, logits| {
                            caches.push((window.to_vec(), x.to_vec(), hidden.to_vec(), logits.to_vec()));
                            Ok(())
                        },
                    )?;
                    // predictive distributions for the confidence split and
                    // off-target scaling; the pad token can never be a target
                    // under teacher forcing, so its mass is masked out before
                    // the label is scaled
                    let dists: Vec<ClassDistribution> = caches
                        .iter()
                        .map(|(_, _, _, logits)| {
                            let dist = match model.config.head {
                                HeadMode::Softmax => ClassDistribution::new(softmax(logits))?,
                                HeadMode::Edl => DirichletParams::from_logits(logits).mean(),
                            };
                            let mut p = dist.probs().to_vec();
                            p[model.config.pad_id] = 0.0;
                            crate::label_types::normalize(&p)
                        })
                        .collect::<Result<_>>()?;
                    let labels = bridged.soft_labels(&dists, spec.soft_mode)?;
                    for (j, (window, x, hidden, logits)) in caches.iter().enumerate() {
                        let alpha = DirichletParams::from_logits(logits);
                        let p = labels.positions[j].to_distribution();
                        let weak_term = weighted_multiweak_edl_loss(
                            &alpha,
                            std::slice::from_ref(&p),
                            &single,
                            state.lambda_t,
                            Some(&gen_opts),
                        )?;
                        let weak_term = LossValue {
                            value: weak_term.value,
                            grad: chain_evidence(&weak_term.grad, logits),
                        };
                        let term = if state.gamma > 0.0 {
                            let own = harden(&alpha.mean());
                            let self_p = ClassDistribution::one_hot(alpha.len(), own.class_index);
                            let self_term = weighted_multiweak_edl_loss(
                                &alpha,
                                std::slice::from_ref(&self_p),
                                &single,
                                state.lambda_t,
                                Some(&gen_opts),
                            )?;
                            let self_term = LossValue {
                                value: self_term.value,
                                grad: chain_evidence(&self_term.grad, logits),
                            };
                            mix_aux(&weak_term, &self_term, state.gamma)?
                        } else {
                            weak_term
                        };
                        sample_loss += scale * term.value;
                        let g: Vec<f64> = term.grad.iter().map(|g| scale * g).collect();
                        model.backward_step(window, x, hidden, &g, &mut grad);
                    }
                }
            }
        }
        check_finite(sample_loss, si)?;
        total += sample_loss;
    }
    let n = batch.len() as f64;
    for g in grad.iter_mut() {
        *g /= n;
    }
    Ok((total / n, grad))
}

/// Adds `coeff · ∂ log P(seq | prompt) / ∂θ` to `grad` under teacher forcing
/// (the building block for sequence-level preference objectives).
pub fn accumulate_sequence_logprob_grad(
    model: &GeneratorModel,
    prompt: &[usize],
    seq: &[usize],
    coeff: f64,
    grad: &mut [f64],
) -> Result<()> {
    for (j, &tok) in seq.iter().enumerate() {
        let window = model.window_ids(prompt, &seq[..j])?;
        let (x, hidden, logits) = model.forward_window(&window);
        if tok >= logits.len() {
            return Err(CoreError::UnknownSymbol(format!("token id {tok}")));
        }
        let probs = softmax(&logits);
        // d log softmax[tok] / d logits = onehot(tok) − softmax
        let mut g: Vec<f64> = probs.iter().map(|p| -coeff * p).collect();
        g[tok] += coeff;
        model.backward_step(&window, &x, &hidden, &g, grad);
    }
    Ok(())
}

/// Plain or momentum SGD settings for a full fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 50,
            batch_size: 32,
        }
    }
}

/// Outcome of a training run: fully determined by (model seed, data, fit seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_eval_metric: Vec<f64>,
    /// Mean α_target/α₀ on the train set per epoch (evidential heads only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub epoch_edl_target_mass: Vec<f64>,
    pub final_params: Vec<f64>,
}

fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Train a classifier with the γ and λ_t schedules applied per optimizer step.
pub fn fit_classifier(
    model: &mut ClassifierModel,
    data: &[ClassificationSample],
    spec: &ClassifierLossSpec,
    sgd: &SgdConfig,
    seed: u64,
    eval: Option<&dyn Fn(&ClassifierModel) -> f64>,
) -> Result<FitReport> {
    if data.is_empty() {
        return Err(CoreError::EmptySequence("empty dataset".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut velocity = vec![0.0; model.parameter_count()];
    let mut report = FitReport {
        seed,
        epoch_train_loss: Vec::new(),
        epoch_eval_metric: Vec::new(),
        epoch_edl_target_mass: Vec::new(),
        final_params: Vec::new(),
    };
    let mut step = 0usize;
    for _ in 0..sgd.epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in minibatches(data.len(), sgd.batch_size, &mut rng) {
            let batch: Vec<ClassificationSample> =
                batch_idx.iter().map(|i| data[*i].clone()).collect();
            let state = LossState::at_step(spec.aux, &spec.schedule, step);
            let (loss, grad) = classifier_gradients(model, &batch, spec.kind, state)?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            let mut params = model.params().to_vec();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = sgd.momentum * *v - sgd.learning_rate * g;
                *p += *v;
            }
            model.set_params(&params);
            step += 1;
        }
        report.epoch_train_loss.push(epoch_loss / seen as f64);
        if let Some(f) = eval {
            report.epoch_eval_metric.push(f(model));
        }
        if model.config.head == HeadMode::Edl {
            let mut mass = 0.0;
            for sample in data {
                let logits = model.logits(&sample.features)?;
                let alpha = DirichletParams::from_logits(&logits);
                let t = sample.supervision.reference_class();
                mass += alpha.alpha()[t] / alpha.strength();
            }
            report.epoch_edl_target_mass.push(mass / data.len() as f64);
        }
    }
    report.final_params = model.params().to_vec();
    Ok(report)
}

/// Train a generator with the γ and λ_t schedules applied per optimizer step.
pub fn fit_generator(
    model: &mut GeneratorModel,
    data: &[GenerationSample],
    spec: &GeneratorLossSpec,
    sgd: &SgdConfig,
    seed: u64,
    eval: Option<&dyn Fn(&GeneratorModel) -> f64>,
) -> Result<FitReport> {
    if data.is_empty() {
        return Err(CoreError::EmptySequence("empty dataset".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut velocity = vec![0.0; model.parameter_count()];
    let mut report = FitReport {
        seed,
        epoch_train_loss: Vec::new(),
        epoch_eval_metric: Vec::new(),
        epoch_edl_target_mass: Vec::new(),
        final_params: Vec::new(),
    };
    let mut step = 0usize;
    for _ in 0..sgd.epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in minibatches(data.len(), sgd.batch_size, &mut rng) {
            let batch: Vec<GenerationSample> =
                batch_idx.iter().map(|i| data[*i].clone()).collect();
            let state = LossState::at_step(spec.aux, &spec.schedule, step);
            let (loss, grad) = generator_gradients(model, &batch, spec, state)?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            let mut params = model.params().to_vec();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = sgd.momentum * *v - sgd.learning_rate * g;
                *p += *v;
            }
            model.set_params(&params);
            step += 1;
        }
        report.epoch_train_loss.push(epoch_loss / seen as f64);
        if let Some(f) = eval {
            report.epoch_eval_metric.push(f(model));
        }
    }
    report.final_params = model.params().to_vec();
    Ok(report)
}
