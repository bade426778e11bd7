//! Weak-teacher construction: corrupted training that lands each teacher in
//! a target quality band, plus weak-label emission for the student split.
//!
//! Teachers are weakened three ways: reduced capacity, corrupted training
//! labels, and a short epoch budget. Classification corruption flips labels
//! inside a teacher-specific half-space so the error patterns of different
//! teachers are systematic and complementary rather than i.i.d. noise.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ws2s_core::decoding::beam_search;
use ws2s_core::label_types::{
    harden, EnsembleWeights, HardLabel, TrainSchedule, WeakLabelClassification, WeakLabelSequence,
    WeightScheme,
};
use ws2s_core::metrics::{accuracy, slu_f1};
use ws2s_core::models::{
    fit_classifier, fit_generator, ClassificationSample, ClassifierConfig, ClassifierLossKind,
    ClassifierLossSpec, ClassifierModel, GenSupervision, GenerationSample, GeneratorConfig,
    GeneratorLossKind, GeneratorLossSpec, GeneratorModel, HeadMode, SgdConfig, Supervision,
};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::space::SeqSpace;
use crate::tasks::{parse_slots, ClassificationRecord, ClassificationTask, SlotfillRecord,
    SlotfillTask, SLOT_INVENTORY};

/// Weak classifiers with their measured held-out accuracies.
pub struct WeakClassifierEnsemble {
    pub models: Vec<ClassifierModel>,
    pub test_accuracy: Vec<f64>,
    pub noise_used: Vec<f64>,
}

/// Flip labels with probability `rate` inside the half-space w·x > 0 drawn
/// from the teacher's seed.
fn corrupt_classification(
    records: &[ClassificationRecord],
    rate: f64,
    seed: u64,
) -> Vec<ClassificationSample> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_features = records[0].features.len();
    let w: Vec<f64> = (0..n_features).map(|_| rng.gen_range(-1.0..1.0)).collect();
    records
        .iter()
        .map(|r| {
            let inside = w.iter().zip(&r.features).map(|(a, b)| a * b).sum::<f64>() > 0.0;
            let mut label = r.label;
            if inside && rng.gen_bool(rate.clamp(0.0, 1.0)) {
                label = 1 - label;
            }
            ClassificationSample {
                features: r.features.clone(),
                supervision: Supervision::Truth(HardLabel::new(label)),
            }
        })
        .collect()
}

pub fn classifier_test_accuracy(
    model: &ClassifierModel,
    test: &[ClassificationRecord],
) -> Result<f64> {
    let preds: Vec<HardLabel> = test
        .iter()
        .map(|r| model.predict(&r.features))
        .collect::<ws2s_core::Result<_>>()
        .map_err(HarnessError::stage("evaluate"))?;
    let refs: Vec<HardLabel> = test.iter().map(|r| HardLabel::new(r.label)).collect();
    accuracy(&preds, &refs).map_err(HarnessError::stage("evaluate"))
}

/// Trains N weak classifiers, adjusting each teacher's corruption rate until
/// its held-out accuracy lands in the configured band.
pub fn make_weak_classifier_ensemble(
    cfg: &ExperimentConfig,
    task: &ClassificationTask,
    seed: u64,
) -> Result<WeakClassifierEnsemble> {
    const MAX_ATTEMPTS: usize = 8;
    let mut models = Vec::new();
    let mut test_accuracy = Vec::new();
    let mut noise_used = Vec::new();
    let (lo, hi) = (cfg.weak.band_lo, cfg.weak.band_hi);
    for i in 0..cfg.weak.count {
        let mut rate = cfg.weak.noise_for(i);
        let mut tried = Vec::new();
        let mut landed = None;
        for attempt in 0..MAX_ATTEMPTS {
            tried.push(rate);
            let corrupt_seed = seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(i as u64 * 131 + attempt as u64);
            let data = corrupt_classification(&task.weak_train, rate, corrupt_seed);
            let config = ClassifierConfig {
                n_features: task.n_features,
                hidden: cfg.weak.hidden_for(i),
                n_classes: task.n_classes,
                head: HeadMode::Softmax,
            };
            let mut model = ClassifierModel::new(config, corrupt_seed ^ 0xabcd);
            let spec = ClassifierLossSpec {
                kind: ClassifierLossKind::CrossEntropy,
                schedule: TrainSchedule::default(),
                aux: false,
            };
            let sgd = SgdConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                epochs: cfg.weak.epochs,
                batch_size: 32,
            };
            fit_classifier(&mut model, &data, &spec, &sgd, corrupt_seed ^ 0x1234, None)
                .map_err(HarnessError::stage("train-weak"))?;
            let acc = classifier_test_accuracy(&model, &task.test)?;
            if cfg.weak.skip_band_check || (lo..=hi).contains(&acc) {
                landed = Some((model, acc, rate));
                break;
            }
            // steer the corruption rate toward the band's midpoint
            let mid = 0.5 * (lo + hi);
            rate = (rate + 1.4 * (acc - mid)).clamp(0.02, 0.9);
            if attempt == MAX_ATTEMPTS - 1 {
                return Err(HarnessError::WeakBandFailure {
                    index: i,
                    attempts: MAX_ATTEMPTS,
                    accuracy: acc,
                    lo,
                    hi,
                    noise_tried: tried,
                });
            }
        }
        let (model, acc, rate) = landed.unwrap();
        models.push(model);
        test_accuracy.push(acc);
        noise_used.push(rate);
    }
    Ok(WeakClassifierEnsemble {
        models,
        test_accuracy,
        noise_used,
    })
}

/// Weak classification labels (hard vote + full confidence) for a split.
pub fn emit_weak_classification_labels(
    ensemble: &WeakClassifierEnsemble,
    records: &[ClassificationRecord],
) -> Result<Vec<Vec<WeakLabelClassification>>> {
    records
        .iter()
        .map(|r| {
            ensemble
                .models
                .iter()
                .map(|m| {
                    let confidence = m.predictive(&r.features)?;
                    let hard = harden(&confidence);
                    WeakLabelClassification::new(hard, confidence)
                })
                .collect::<ws2s_core::Result<Vec<_>>>()
                .map_err(HarnessError::stage("weak-labels"))
        })
        .collect()
}

/// Weak generators with their measured held-out SLU-F1.
pub struct WeakGeneratorEnsemble {
    pub models: Vec<GeneratorModel>,
    pub test_slu: Vec<f64>,
}

/// Corrupt slot values with probability `rate` per slot: mostly a
/// teacher-specific confusion rotation (a systematic error the teacher
/// learns with conviction), partly a uniform random value (label conflict
/// that keeps the teacher's confidence honest).
fn corrupt_slotfill_targets(
    records: &[SlotfillRecord],
    rate: f64,
    seed: u64,
) -> Vec<(String, String)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let offsets: Vec<usize> = SLOT_INVENTORY
        .iter()
        .map(|(_, _, values)| rng.gen_range(1..values.len()))
        .collect();
    records
        .iter()
        .map(|r| {
            let mut slots = r.slots.clone();
            for (si, (key, _, values)) in SLOT_INVENTORY.iter().enumerate() {
                if let Some(v) = slots.get_mut(*key) {
                    if rng.gen_bool(rate.clamp(0.0, 1.0)) {
                        let pos = values.iter().position(|x| x == v).unwrap_or(0);
                        let replacement = if rng.gen_bool(0.7) {
                            values[(pos + offsets[si]) % values.len()]
                        } else {
                            values[rng.gen_range(0..values.len())]
                        };
                        *v = replacement.to_string();
                    }
                }
            }
            (r.text.clone(), crate::tasks::serialize_slots(&slots))
        })
        .collect()
}

/// Held-out SLU-F1 of one generator under beam decoding.
pub fn generator_test_slu(
    model: &GeneratorModel,
    space: &SeqSpace,
    test: &[SlotfillRecord],
    beam: usize,
    max_len: usize,
) -> Result<f64> {
    let mut preds = Vec::with_capacity(test.len());
    let mut refs = Vec::with_capacity(test.len());
    for rec in test {
        let prompt = space.prompt_ids(&rec.text)?;
        let beams = beam_search(model, &prompt, beam, max_len, space.eos)
            .map_err(HarnessError::stage("decode"))?;
        let text = space.decode_text(&beams[0].token_ids);
        preds.push(parse_slots(&text));
        refs.push(rec.slot_prediction());
    }
    slu_f1(&preds, &refs).map_err(HarnessError::stage("evaluate"))
}

fn slotfill_truth_samples(
    pairs: &[(String, String)],
    space: &SeqSpace,
) -> Result<Vec<GenerationSample>> {
    pairs
        .iter()
        .map(|(text, target)| {
            Ok(GenerationSample {
                prompt: space.prompt_ids(text)?,
                supervision: GenSupervision::Truth(space.target_ids(target)?),
            })
        })
        .collect()
}

/// Trains N weak generators on corrupted targets in the weak token space.
pub fn make_weak_generator_ensemble(
    cfg: &ExperimentConfig,
    task: &SlotfillTask,
    space: &SeqSpace,
    seed: u64,
) -> Result<WeakGeneratorEnsemble> {
    let mut models = Vec::new();
    let mut test_slu = Vec::new();
    for i in 0..cfg.weak.count {
        let rate = cfg.weak.noise_for(i);
        let corrupt_seed = seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(i as u64 * 131);
        let pairs = corrupt_slotfill_targets(&task.weak_train, rate, corrupt_seed);
        let data = slotfill_truth_samples(&pairs, space)?;
        let config = GeneratorConfig {
            vocab: space.vocab,
            embed: cfg.weak_gen.embed,
            window: cfg.weak_gen.window,
            hidden: cfg.weak.hidden_for(i),
            pad_id: space.pad,
            head: HeadMode::Softmax,
        };
        let mut model = GeneratorModel::new(config, corrupt_seed ^ 0xabcd);
        let spec = GeneratorLossSpec {
            kind: GeneratorLossKind::CrossEntropy,
            schedule: TrainSchedule::default(),
            aux: false,
            soft_mode: ws2s_core::bridge::SoftLabelMode::Full,
        };
        let sgd = SgdConfig {
            learning_rate: 0.08,
            momentum: 0.9,
            epochs: cfg.weak.epochs,
            batch_size: 16,
        };
        fit_generator(&mut model, &data, &spec, &sgd, corrupt_seed ^ 0x1234, None)
            .map_err(HarnessError::stage("train-weak"))?;
        let f1 = generator_test_slu(&model, space, &task.test, cfg.decode.beam, cfg.decode.max_len)?;
        models.push(model);
        test_slu.push(f1);
    }
    Ok(WeakGeneratorEnsemble { models, test_slu })
}

/// Weak sequence labels: each teacher's top beam over the student split,
/// with per-token log-probabilities.
pub fn emit_weak_sequence_labels(
    ensemble: &WeakGeneratorEnsemble,
    space: &SeqSpace,
    records: &[SlotfillRecord],
    beam: usize,
    max_len: usize,
) -> Result<Vec<Vec<WeakLabelSequence>>> {
    records
        .iter()
        .map(|rec| {
            let prompt = space.prompt_ids(&rec.text)?;
            ensemble
                .models
                .iter()
                .map(|m| {
                    let beams = beam_search(m, &prompt, beam, max_len, space.eos)
                        .map_err(HarnessError::stage("weak-labels"))?;
                    let best = &beams[0];
                    WeakLabelSequence::new(
                        best.token_ids.clone(),
                        best.per_token_logprobs
                            .iter()
                            .map(|lp| lp.min(0.0))
                            .collect(),
                    )
                    .map_err(HarnessError::stage("weak-labels"))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Resolved per-sample loss weights under the configured scheme.
///
/// - average: uniform
/// - fixed: the configured λᵢ (uniform when omitted)
/// - dynamic (classification): each teacher's confidence in its own vote
/// - dynamic (generation): each teacher's per-token geometric-mean
///   probability of its own label
pub fn sample_weights_classification(
    scheme: WeightScheme,
    fixed: &[f64],
    labels: &[WeakLabelClassification],
) -> Result<EnsembleWeights> {
    let n = labels.len();
    let w = match scheme {
        WeightScheme::Average => EnsembleWeights::average(n),
        WeightScheme::Fixed => {
            let raw = if fixed.is_empty() {
                vec![1.0; n]
            } else {
                fixed.to_vec()
            };
            EnsembleWeights::new(WeightScheme::Fixed, raw)
                .map_err(HarnessError::stage("weights"))?
        }
        WeightScheme::Dynamic => {
            let raw: Vec<f64> = labels.iter().map(|l| l.max_prob().max(1e-9)).collect();
            EnsembleWeights::new(WeightScheme::Dynamic, raw)
                .map_err(HarnessError::stage("weights"))?
        }
    };
    Ok(w)
}

pub fn sample_weights_generation(
    scheme: WeightScheme,
    fixed: &[f64],
    labels: &[WeakLabelSequence],
) -> Result<EnsembleWeights> {
    let n = labels.len();
    let w = match scheme {
        WeightScheme::Average => EnsembleWeights::average(n),
        WeightScheme::Fixed => {
            let raw = if fixed.is_empty() {
                vec![1.0; n]
            } else {
                fixed.to_vec()
            };
            EnsembleWeights::new(WeightScheme::Fixed, raw)
                .map_err(HarnessError::stage("weights"))?
        }
        WeightScheme::Dynamic => {
            let raw: Vec<f64> = labels
                .iter()
                .map(|l| {
                    let mean_lp: f64 =
                        l.token_logprobs.iter().sum::<f64>() / l.token_logprobs.len() as f64;
                    mean_lp.exp().max(1e-9)
                })
                .collect();
            EnsembleWeights::new(WeightScheme::Dynamic, raw)
                .map_err(HarnessError::stage("weights"))?
        }
    };
    Ok(w)
}
