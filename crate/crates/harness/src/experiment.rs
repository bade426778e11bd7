//! End-to-end pipelines: weak training → weak labels → (bridging) → strong
//! student training → optional conservative preference stage → evaluation
//! with measured ceilings and weak baselines.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use ws2s_core::bridge::{prepare_bridged, BridgedSequence, BridgedWord};
use ws2s_core::decoding::{joint_decode, sample_sequence, teacher_force_score, ScoreMode};
use ws2s_core::label_types::{
    EnsembleWeights, HardLabel, TrainSchedule, WeakLabelClassification, WeakLabelSequence,
};
use ws2s_core::losses::cdpo_loss;
use ws2s_core::metrics::pgr;
use ws2s_core::models::{
    accumulate_sequence_logprob_grad, fit_classifier, fit_generator, save_classifier,
    save_generator, ClassificationSample, ClassifierConfig, ClassifierLossKind,
    ClassifierLossSpec, ClassifierModel, GenSupervision, GenerationSample, GeneratorConfig,
    GeneratorLossKind, GeneratorLossSpec, GeneratorModel, HeadMode, SgdConfig, Supervision,
};

use crate::config::{DpoSection, ExperimentConfig, Method, TaskKind};
use crate::ensemble::{
    classifier_test_accuracy, emit_weak_classification_labels, emit_weak_sequence_labels,
    generator_test_slu, make_weak_classifier_ensemble, make_weak_generator_ensemble,
    sample_weights_classification, sample_weights_generation,
};
use crate::error::{HarnessError, Result};
use crate::jsonl::{write_jsonl, WeakClsLabelLine, WeakSeqLabelLine};
use crate::report::{ExperimentReport, SeedOutcome};
use crate::space::SeqSpace;
use crate::tasks::{
    gen_classification_task, gen_slotfill_task, ClassificationRecord, ClassificationTask,
    SlotfillRecord, SlotfillTask,
};

/// Schedule resolved for a concrete dataset size.
pub fn schedule_for(
    cfg: &ExperimentConfig,
    n_samples: usize,
    epochs: usize,
    vocab: usize,
) -> TrainSchedule {
    let steps_per_epoch = n_samples.div_ceil(cfg.strong.batch_size.max(1));
    let total_steps = (epochs * steps_per_epoch).max(1);
    let anneal_steps =
        ((total_steps as f64 * cfg.schedule.anneal_fraction).round() as usize).max(1);
    TrainSchedule {
        gamma_max: cfg.schedule.gamma_max,
        total_steps,
        edl_lambda_max: cfg.schedule.edl_lambda_max,
        anneal_steps,
        kl_coefficient_gen: cfg
            .schedule
            .kl_coefficient_gen
            .unwrap_or(1.0 / vocab.max(1) as f64),
        clamp_lo: cfg.schedule.clamp_lo,
        clamp_hi: cfg.schedule.clamp_hi,
    }
}

pub fn strong_sgd(cfg: &ExperimentConfig) -> SgdConfig {
    SgdConfig {
        learning_rate: cfg.strong.learning_rate,
        momentum: cfg.strong.momentum,
        epochs: cfg.strong.epochs,
        batch_size: cfg.strong.batch_size,
    }
}

fn strong_classifier_config(cfg: &ExperimentConfig, n_features: usize, head: HeadMode) -> ClassifierConfig {
    ClassifierConfig {
        n_features,
        hidden: cfg.strong.hidden,
        n_classes: 2,
        head,
    }
}

fn strong_generator_config(cfg: &ExperimentConfig, space: &SeqSpace, head: HeadMode) -> GeneratorConfig {
    GeneratorConfig {
        vocab: space.vocab,
        embed: cfg.strong.embed,
        window: cfg.strong.window,
        hidden: cfg.strong.hidden,
        pad_id: space.pad,
        head,
    }
}

/// Student head and loss kind implied by the configured method.
fn classification_objective(method: Method) -> (ClassifierLossKind, HeadMode) {
    match method {
        Method::Single | Method::NaiveMultiweak => {
            (ClassifierLossKind::NaiveMultiweak, HeadMode::Softmax)
        }
        Method::BayesianMultiweak => (ClassifierLossKind::WeightedEdl, HeadMode::Edl),
        Method::JointDecoding => unreachable!("validated: joint decoding is generation-only"),
    }
}

fn generation_objective(method: Method) -> (GeneratorLossKind, HeadMode) {
    match method {
        Method::Single | Method::NaiveMultiweak => {
            (GeneratorLossKind::NaiveMultiweak, HeadMode::Softmax)
        }
        Method::JointDecoding => (GeneratorLossKind::CrossEntropy, HeadMode::Softmax),
        Method::BayesianMultiweak => (GeneratorLossKind::BayesianEdl, HeadMode::Edl),
    }
}

/// Ceiling classifier: ground-truth training with aligned hyperparameters.
pub fn train_classifier_ceiling(
    cfg: &ExperimentConfig,
    records: &[ClassificationRecord],
    n_features: usize,
    seed: u64,
) -> Result<ClassifierModel> {
    let truth: Vec<ClassificationSample> = records
        .iter()
        .map(|r| ClassificationSample {
            features: r.features.clone(),
            supervision: Supervision::Truth(HardLabel::new(r.label)),
        })
        .collect();
    let schedule = schedule_for(cfg, records.len(), cfg.strong.epochs, 2);
    let mut model = ClassifierModel::new(
        strong_classifier_config(cfg, n_features, HeadMode::Softmax),
        seed ^ 0xce111,
    );
    let spec = ClassifierLossSpec {
        kind: ClassifierLossKind::CrossEntropy,
        schedule,
        aux: false,
    };
    fit_classifier(&mut model, &truth, &spec, &strong_sgd(cfg), seed ^ 0xf17, None)
        .map_err(HarnessError::stage("train-ceiling"))?;
    Ok(model)
}

/// Student supervision for classification: per-sample teacher votes with the
/// configured weighting scheme resolved per sample.
pub fn classification_student_samples(
    cfg: &ExperimentConfig,
    records: &[ClassificationRecord],
    weak_labels: &[Vec<WeakLabelClassification>],
) -> Result<Vec<ClassificationSample>> {
    let keep = if cfg.experiment.method == Method::Single {
        1
    } else {
        cfg.weak.count
    };
    records
        .iter()
        .zip(weak_labels)
        .map(|(r, labels)| {
            let kept = labels[..keep.min(labels.len())].to_vec();
            let weights =
                sample_weights_classification(cfg.weak.weighting, &cfg.weak.lambdas, &kept)?;
            Ok(ClassificationSample {
                features: r.features.clone(),
                supervision: Supervision::Weak {
                    labels: kept,
                    weights,
                },
            })
        })
        .collect()
}

/// Trains the classification student under the configured method.
pub fn train_classifier_student(
    cfg: &ExperimentConfig,
    samples: &[ClassificationSample],
    n_features: usize,
    seed: u64,
) -> Result<ClassifierModel> {
    let (kind, head) = classification_objective(cfg.experiment.method);
    let schedule = schedule_for(cfg, samples.len(), cfg.strong.epochs, 2);
    let mut model = ClassifierModel::new(
        strong_classifier_config(cfg, n_features, head),
        seed ^ 0x57d,
    );
    let spec = ClassifierLossSpec {
        kind,
        schedule,
        aux: cfg.experiment.aux_loss,
    };
    fit_classifier(&mut model, samples, &spec, &strong_sgd(cfg), seed ^ 0x57f, None)
        .map_err(HarnessError::stage("train-strong"))?;
    Ok(model)
}

/// Text tokens of a weak label (specials stripped, dangling leading
/// continuation pieces dropped) plus the end-marker log-probability when the
/// teacher emitted one. Free generation can start mid-word; the bridge
/// requires well-formed words, so the malformed prefix is discarded.
fn weak_label_text(
    label: &WeakLabelSequence,
    weak_space: &SeqSpace,
) -> (WeakLabelSequence, Option<f64>) {
    let mut ids = Vec::new();
    let mut lps = Vec::new();
    let mut eos_lp = None;
    for (&id, &lp) in label.token_ids.iter().zip(&label.token_logprobs) {
        if id == weak_space.eos {
            eos_lp = Some(lp);
            break;
        }
        if id < weak_space.tokenizer.vocab_size() {
            let dangling = ids.is_empty()
                && weak_space
                    .tokenizer
                    .is_continuation(id)
                    .unwrap_or(false);
            if !dangling {
                ids.push(id);
                lps.push(lp);
            }
        }
    }
    if ids.is_empty() {
        // degenerate decode; carry only the terminator information
        return (
            WeakLabelSequence::new(vec![weak_space.eos], vec![0.0]).unwrap(),
            eos_lp,
        );
    }
    (WeakLabelSequence::new(ids, lps).unwrap(), eos_lp)
}

/// Re-expresses a weak label in the strong vocabulary (text transfer) and
/// appends the strong end marker.
fn retokenize_target(
    label: &WeakLabelSequence,
    weak_space: &SeqSpace,
    strong_space: &SeqSpace,
) -> Result<Vec<usize>> {
    let (text_label, _) = weak_label_text(label, weak_space);
    if text_label.token_ids == [weak_space.eos] {
        return Ok(vec![strong_space.eos]);
    }
    let text = weak_space
        .tokenizer
        .detokenize(&text_label.token_ids)
        .map_err(HarnessError::stage("bridge"))?;
    strong_space.target_ids(&text)
}

/// Word-bridges a weak label into the strong token space, with a terminator
/// pseudo-word carrying the teacher's end-marker probability.
fn bridge_target(
    label: &WeakLabelSequence,
    weak_space: &SeqSpace,
    strong_space: &SeqSpace,
) -> Result<BridgedSequence> {
    let (text_label, eos_lp) = weak_label_text(label, weak_space);
    let mut bridged = if text_label.token_ids == [weak_space.eos] {
        BridgedSequence { words: Vec::new() }
    } else {
        prepare_bridged(&text_label, &weak_space.tokenizer, &strong_space.tokenizer)
            .map_err(HarnessError::stage("bridge"))?
    };
    bridged.words.push(BridgedWord {
        word: String::new(),
        piece_ids: vec![strong_space.eos],
        word_logprob: eos_lp.unwrap_or(0.0).clamp(-30.0, 0.0),
    });
    Ok(bridged)
}

/// Student supervision for generation under the configured method. Joint
/// decoding additionally needs the weak models themselves.
pub fn slotfill_student_samples(
    cfg: &ExperimentConfig,
    records: &[SlotfillRecord],
    weak_labels: &[Vec<WeakLabelSequence>],
    weak_space: &SeqSpace,
    strong_space: &SeqSpace,
    weak_models: Option<&[GeneratorModel]>,
) -> Result<Vec<GenerationSample>> {
    let keep = if cfg.experiment.method == Method::Single {
        1
    } else {
        cfg.weak.count
    };
    let mut out = Vec::with_capacity(records.len());
    for (r, labels) in records.iter().zip(weak_labels) {
        let kept = &labels[..keep.min(labels.len())];
        let prompt = strong_space.prompt_ids(&r.text)?;
        let supervision = match cfg.experiment.method {
            Method::Single | Method::NaiveMultiweak => {
                let targets: Vec<Vec<usize>> = kept
                    .iter()
                    .map(|l| retokenize_target(l, weak_space, strong_space))
                    .collect::<Result<_>>()?;
                let weights =
                    sample_weights_generation(cfg.weak.weighting, &cfg.weak.lambdas, kept)?;
                GenSupervision::WeakSequences { targets, weights }
            }
            Method::JointDecoding => {
                let models = weak_models.ok_or_else(|| HarnessError::StageOther {
                    stage: "jointdecode",
                    detail: "joint decoding needs the weak models".into(),
                })?;
                let weak_prompt = weak_space.prompt_ids(&r.text)?;
                let weights =
                    sample_weights_generation(cfg.weak.weighting, &cfg.weak.lambdas, kept)?;
                let chosen = joint_decode(
                    models,
                    &weights,
                    &weak_prompt,
                    cfg.decode.joint_beam,
                    cfg.decode.max_len,
                    weak_space.eos,
                    ScoreMode::LogLengthNormalized,
                )
                .map_err(HarnessError::stage("jointdecode"))?;
                let label = WeakLabelSequence::new(
                    chosen.token_ids.clone(),
                    chosen
                        .per_token_logprobs
                        .iter()
                        .map(|lp| lp.min(0.0))
                        .collect(),
                )
                .map_err(HarnessError::stage("jointdecode"))?;
                GenSupervision::Truth(retokenize_target(&label, weak_space, strong_space)?)
            }
            Method::BayesianMultiweak => {
                let sequences: Vec<BridgedSequence> = kept
                    .iter()
                    .map(|l| bridge_target(l, weak_space, strong_space))
                    .collect::<Result<_>>()?;
                let weights =
                    sample_weights_generation(cfg.weak.weighting, &cfg.weak.lambdas, kept)?;
                GenSupervision::Bridged { sequences, weights }
            }
        };
        out.push(GenerationSample {
            prompt,
            supervision,
        });
    }
    Ok(out)
}

/// Ceiling generator: ground-truth targets with aligned hyperparameters.
pub fn train_generator_ceiling(
    cfg: &ExperimentConfig,
    records: &[SlotfillRecord],
    strong_space: &SeqSpace,
    seed: u64,
) -> Result<GeneratorModel> {
    let truth: Vec<GenerationSample> = records
        .iter()
        .map(|r| {
            Ok(GenerationSample {
                prompt: strong_space.prompt_ids(&r.text)?,
                supervision: GenSupervision::Truth(strong_space.target_ids(&r.target_text)?),
            })
        })
        .collect::<Result<_>>()?;
    let schedule = schedule_for(cfg, records.len(), cfg.strong.epochs, strong_space.vocab);
    let mut model = GeneratorModel::new(
        strong_generator_config(cfg, strong_space, HeadMode::Softmax),
        seed ^ 0xce111,
    );
    let spec = GeneratorLossSpec {
        kind: GeneratorLossKind::CrossEntropy,
        schedule,
        aux: false,
        soft_mode: cfg.experiment.soft_label_mode,
    };
    fit_generator(&mut model, &truth, &spec, &strong_sgd(cfg), seed ^ 0xf17, None)
        .map_err(HarnessError::stage("train-ceiling"))?;
    Ok(model)
}

/// Trains the generation student under the configured method.
pub fn train_generator_student(
    cfg: &ExperimentConfig,
    samples: &[GenerationSample],
    strong_space: &SeqSpace,
    seed: u64,
) -> Result<GeneratorModel> {
    let (kind, head) = generation_objective(cfg.experiment.method);
    let schedule = schedule_for(cfg, samples.len(), cfg.strong.epochs, strong_space.vocab);
    let mut model = GeneratorModel::new(
        strong_generator_config(cfg, strong_space, head),
        seed ^ 0x57d,
    );
    let spec = GeneratorLossSpec {
        kind,
        schedule,
        aux: cfg.experiment.aux_loss,
        soft_mode: cfg.experiment.soft_label_mode,
    };
    fit_generator(&mut model, samples, &spec, &strong_sgd(cfg), seed ^ 0x57f, None)
        .map_err(HarnessError::stage("train-strong"))?;
    Ok(model)
}

fn pgr_outcome(
    seed: u64,
    student_metric: f64,
    ceiling_metric: f64,
    weak_metrics: Vec<f64>,
) -> Result<SeedOutcome> {
    for (i, w) in weak_metrics.iter().enumerate() {
        if ceiling_metric <= *w {
            return Err(HarnessError::StageOther {
                stage: "baselines",
                detail: format!(
                    "ceiling {ceiling_metric:.4} does not exceed weak model {i} ({w:.4}); \
                     the weak-to-strong premise fails for this config"
                ),
            });
        }
    }
    let pgr_per_weak: Vec<f64> = weak_metrics
        .iter()
        .map(|w| pgr(student_metric, *w, ceiling_metric))
        .collect::<ws2s_core::Result<_>>()
        .map_err(HarnessError::stage("pgr"))?;
    let pgr_mean = pgr_per_weak.iter().sum::<f64>() / pgr_per_weak.len() as f64;
    Ok(SeedOutcome {
        seed,
        student_metric,
        ceiling_metric,
        weak_metrics,
        pgr_per_weak,
        pgr_mean,
        dpo_before_metric: None,
        dpo_after_metric: None,
    })
}

fn run_classification_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    seed_dir: &Path,
) -> Result<SeedOutcome> {
    let sizes = cfg.task_section();
    let task = gen_classification_task(
        seed,
        sizes.n_weak_train,
        sizes.n_strong_train,
        sizes.n_test,
        sizes.n_features,
    );
    std::fs::create_dir_all(seed_dir)?;
    write_jsonl(&seed_dir.join("weak_train.jsonl"), task.weak_train.iter())?;
    write_jsonl(&seed_dir.join("strong_train.jsonl"), task.strong_train.iter())?;
    write_jsonl(&seed_dir.join("test.jsonl"), task.test.iter())?;

    let ensemble = make_weak_classifier_ensemble(cfg, &task, seed)?;
    for (i, m) in ensemble.models.iter().enumerate() {
        save_classifier(m, &seed_dir.join(format!("weak_{i}.bin")))
            .map_err(HarnessError::stage("persist"))?;
    }
    let weak_labels = emit_weak_classification_labels(&ensemble, &task.strong_train)?;
    write_jsonl(
        &seed_dir.join("weak_labels.jsonl"),
        task.strong_train
            .iter()
            .zip(&weak_labels)
            .flat_map(|(r, labels)| {
                labels
                    .iter()
                    .enumerate()
                    .map(move |(mi, l)| WeakClsLabelLine {
                        id: r.id,
                        model: mi,
                        hard: l.hard.class_index,
                        confidence: l.confidence.probs().to_vec(),
                    })
            }),
    )?;

    let ceiling = train_classifier_ceiling(cfg, &task.strong_train, task.n_features, seed)?;
    save_classifier(&ceiling, &seed_dir.join("ceiling.bin"))
        .map_err(HarnessError::stage("persist"))?;
    let ceiling_metric = classifier_test_accuracy(&ceiling, &task.test)?;

    let samples = classification_student_samples(cfg, &task.strong_train, &weak_labels)?;
    let student = train_classifier_student(cfg, &samples, task.n_features, seed)?;
    save_classifier(&student, &seed_dir.join("student.bin"))
        .map_err(HarnessError::stage("persist"))?;
    let student_metric = classifier_test_accuracy(&student, &task.test)?;

    let weak_metrics = if cfg.experiment.method == Method::Single {
        ensemble.test_accuracy[..1].to_vec()
    } else {
        ensemble.test_accuracy.clone()
    };
    pgr_outcome(seed, student_metric, ceiling_metric, weak_metrics)
}

fn run_slotfill_seed(cfg: &ExperimentConfig, seed: u64, seed_dir: &Path) -> Result<SeedOutcome> {
    let sizes = cfg.task_section();
    let task = gen_slotfill_task(seed, sizes.n_weak_train, sizes.n_strong_train, sizes.n_test);
    std::fs::create_dir_all(seed_dir)?;
    write_jsonl(&seed_dir.join("weak_train.jsonl"), task.weak_train.iter())?;
    write_jsonl(&seed_dir.join("strong_train.jsonl"), task.strong_train.iter())?;
    write_jsonl(&seed_dir.join("test.jsonl"), task.test.iter())?;

    let weak_space = SeqSpace::weak();
    let strong_space = SeqSpace::strong();

    let ensemble = make_weak_generator_ensemble(cfg, &task, &weak_space, seed)?;
    for (i, m) in ensemble.models.iter().enumerate() {
        save_generator(m, &seed_dir.join(format!("weak_{i}.bin")))
            .map_err(HarnessError::stage("persist"))?;
    }
    let weak_labels = emit_weak_sequence_labels(
        &ensemble,
        &weak_space,
        &task.strong_train,
        cfg.decode.beam,
        cfg.decode.max_len,
    )?;
    write_jsonl(
        &seed_dir.join("weak_labels.jsonl"),
        task.strong_train
            .iter()
            .zip(&weak_labels)
            .flat_map(|(r, labels)| {
                labels
                    .iter()
                    .enumerate()
                    .map(move |(mi, l)| WeakSeqLabelLine {
                        id: r.id,
                        model: mi,
                        token_ids: l.token_ids.clone(),
                        token_logprobs: l.token_logprobs.clone(),
                    })
            }),
    )?;

    let ceiling = train_generator_ceiling(cfg, &task.strong_train, &strong_space, seed)?;
    save_generator(&ceiling, &seed_dir.join("ceiling.bin"))
        .map_err(HarnessError::stage("persist"))?;
    let ceiling_metric = generator_test_slu(
        &ceiling,
        &strong_space,
        &task.test,
        cfg.decode.beam,
        cfg.decode.max_len,
    )?;

    let samples = slotfill_student_samples(
        cfg,
        &task.strong_train,
        &weak_labels,
        &weak_space,
        &strong_space,
        Some(&ensemble.models),
    )?;
    let mut student = train_generator_student(cfg, &samples, &strong_space, seed)?;
    let mut student_metric = generator_test_slu(
        &student,
        &strong_space,
        &task.test,
        cfg.decode.beam,
        cfg.decode.max_len,
    )?;

    let mut dpo_before = None;
    let mut dpo_after = None;
    if let Some(dpo_cfg) = &cfg.dpo {
        dpo_before = Some(student_metric);
        cdpo_stage(
            cfg,
            dpo_cfg,
            &mut student,
            &ensemble.models,
            &weak_space,
            &strong_space,
            &task.strong_train,
            seed,
        )?;
        student_metric = generator_test_slu(
            &student,
            &strong_space,
            &task.test,
            cfg.decode.beam,
            cfg.decode.max_len,
        )?;
        dpo_after = Some(student_metric);
    }
    save_generator(&student, &seed_dir.join("student.bin"))
        .map_err(HarnessError::stage("persist"))?;

    let weak_metrics = if cfg.experiment.method == Method::Single {
        ensemble.test_slu[..1].to_vec()
    } else {
        ensemble.test_slu.clone()
    };
    let mut outcome = pgr_outcome(seed, student_metric, ceiling_metric, weak_metrics)?;
    outcome.dpo_before_metric = dpo_before;
    outcome.dpo_after_metric = dpo_after;
    Ok(outcome)
}

/// Runs every configured seed (in parallel) and aggregates the report.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let seeds = cfg.effective_seeds();
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let seed_dir = out_dir.join(format!("seed_{seed}"));
            match cfg.experiment.task {
                TaskKind::Classification => run_classification_seed(cfg, seed, &seed_dir),
                TaskKind::Slotfill => run_slotfill_seed(cfg, seed, &seed_dir),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let report = ExperimentReport::aggregate(
        cfg.experiment.name.clone(),
        cfg.experiment.task,
        cfg.experiment.method,
        cfg.experiment.aux_loss,
        outcomes,
    );
    report.write(out_dir)?;
    Ok(report)
}

/// Weighted teacher score of a strong-space sequence: the sequence is read
/// back as text and re-tokenized per teacher (the teachers live in their own
/// token space).
pub fn ensemble_text_score(
    strong_ids: &[usize],
    strong_space: &SeqSpace,
    weak_models: &[GeneratorModel],
    weights: &EnsembleWeights,
    weak_prompt: &[usize],
    weak_space: &SeqSpace,
) -> Result<f64> {
    let text = strong_space.decode_text(strong_ids);
    let weak_ids = if text.is_empty() {
        vec![weak_space.eos]
    } else {
        weak_space.target_ids(&text)?
    };
    let mut score = 0.0;
    for (model, lambda) in weak_models.iter().zip(weights.lambdas()) {
        let s = teacher_force_score(model, &weak_ids, weak_prompt)
            .map_err(HarnessError::stage("score"))?;
        score += lambda * s.length_normalized_score;
    }
    Ok(score)
}

/// A (chosen, rejected) pair built from strong-model samples scored by the
/// weak ensemble at text level.
pub struct TextPreferencePair {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Samples up to 4·M draws until at least two distinct candidates exist,
/// then pairs the ensemble-best against the ensemble-worst. `None` when the
/// sampler is degenerate on this prompt.
#[allow(clippy::too_many_arguments)]
pub fn build_text_preference_pair(
    student: &GeneratorModel,
    weak_models: &[GeneratorModel],
    weights: &EnsembleWeights,
    text: &str,
    weak_space: &SeqSpace,
    strong_space: &SeqSpace,
    num_samples: usize,
    max_len: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Option<TextPreferencePair>> {
    let prompt = strong_space.prompt_ids(text)?;
    let weak_prompt = weak_space.prompt_ids(text)?;
    let mut distinct: Vec<Vec<usize>> = Vec::new();
    let mut draws = 0usize;
    while draws < 4 * num_samples && (draws < num_samples || distinct.len() < 2) {
        let s = sample_sequence(student, &prompt, max_len, strong_space.eos, rng)
            .map_err(HarnessError::stage("dpo-sample"))?;
        draws += 1;
        if !s.is_empty() && !distinct.contains(&s) {
            distinct.push(s);
        }
    }
    if distinct.len() < 2 {
        return Ok(None);
    }
    let mut scored: Vec<(f64, Vec<usize>)> = Vec::new();
    for cand in distinct {
        let score = ensemble_text_score(
            &cand,
            strong_space,
            weak_models,
            weights,
            &weak_prompt,
            weak_space,
        )?;
        scored.push((score, cand));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let (chosen_score, chosen) = scored.first().cloned().unwrap();
    let (rejected_score, rejected) = scored.last().cloned().unwrap();
    if chosen == rejected {
        return Ok(None);
    }
    Ok(Some(TextPreferencePair {
        prompt,
        chosen,
        rejected,
        chosen_score,
        rejected_score,
    }))
}

/// One conservative-DPO pass: pair construction from student samples, then
/// cDPO optimization against a frozen reference copy.
#[allow(clippy::too_many_arguments)]
pub fn cdpo_stage(
    cfg: &ExperimentConfig,
    dpo_cfg: &DpoSection,
    student: &mut GeneratorModel,
    weak_models: &[GeneratorModel],
    weak_space: &SeqSpace,
    strong_space: &SeqSpace,
    prompts: &[SlotfillRecord],
    seed: u64,
) -> Result<()> {
    let reference = student.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xd90);
    let n_prompts = dpo_cfg.num_prompts.min(prompts.len());
    let weights = EnsembleWeights::average(weak_models.len());

    let mut pairs = Vec::new();
    for rec in prompts.iter().take(n_prompts) {
        if let Some(pair) = build_text_preference_pair(
            student,
            weak_models,
            &weights,
            &rec.text,
            weak_space,
            strong_space,
            dpo_cfg.num_samples,
            cfg.decode.max_len,
            &mut rng,
        )? {
            pairs.push(pair);
        }
    }
    if pairs.is_empty() {
        return Ok(());
    }

    let log_prob = |model: &GeneratorModel, prompt: &[usize], seq: &[usize]| -> Result<f64> {
        teacher_force_score(model, seq, prompt)
            .map(|s| s.total_logprob)
            .map_err(HarnessError::stage("dpo-score"))
    };

    let mut velocity = vec![0.0; student.parameter_count()];
    for epoch in 0..dpo_cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        use rand::seq::SliceRandom;
        let mut order_rng = ChaCha20Rng::seed_from_u64(seed ^ (0xd91 + epoch as u64));
        order.shuffle(&mut order_rng);
        for &pi in &order {
            let pair = &pairs[pi];
            let lr_c = log_prob(student, &pair.prompt, &pair.chosen)?
                - log_prob(&reference, &pair.prompt, &pair.chosen)?;
            let lr_r = log_prob(student, &pair.prompt, &pair.rejected)?
                - log_prob(&reference, &pair.prompt, &pair.rejected)?;
            let loss = cdpo_loss(lr_c, lr_r, dpo_cfg.beta, dpo_cfg.epsilon)
                .map_err(HarnessError::stage("dpo-loss"))?;
            let (dc, dr) = (loss.grad[0], loss.grad[1]);

            let mut grad = vec![0.0; student.parameter_count()];
            for (seq, coeff) in [(&pair.chosen, dc), (&pair.rejected, dr)] {
                accumulate_sequence_logprob_grad(student, &pair.prompt, seq, coeff, &mut grad)
                    .map_err(HarnessError::stage("dpo-grad"))?;
            }
            let mut params = student.params().to_vec();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = 0.9 * *v - dpo_cfg.learning_rate * g;
                *p += *v;
            }
            student.set_params(&params);
        }
    }
    Ok(())
}

/// Decoded test-set predictions of a generator, as slot structures.
pub fn decode_predictions(
    model: &GeneratorModel,
    space: &SeqSpace,
    records: &[SlotfillRecord],
    beam: usize,
    max_len: usize,
) -> Result<Vec<ws2s_core::metrics::SlotPrediction>> {
    records
        .iter()
        .map(|rec| {
            let prompt = space.prompt_ids(&rec.text)?;
            let beams =
                ws2s_core::decoding::beam_search(model, &prompt, beam, max_len, space.eos)
                    .map_err(HarnessError::stage("decode"))?;
            Ok(crate::tasks::parse_slots(&space.decode_text(&beams[0].token_ids)))
        })
        .collect()
}

/// Reconstructs a [`ClassificationTask`] from a data directory written by
/// `gen-data`.
pub fn load_classification_task(dir: &Path) -> Result<ClassificationTask> {
    let weak_train: Vec<ClassificationRecord> =
        crate::jsonl::read_jsonl(&dir.join("weak_train.jsonl"))?;
    let strong_train: Vec<ClassificationRecord> =
        crate::jsonl::read_jsonl(&dir.join("strong_train.jsonl"))?;
    let test: Vec<ClassificationRecord> = crate::jsonl::read_jsonl(&dir.join("test.jsonl"))?;
    let n_features = weak_train
        .first()
        .map(|r| r.features.len())
        .ok_or_else(|| HarnessError::StageOther {
            stage: "load-data",
            detail: "weak_train.jsonl is empty".into(),
        })?;
    Ok(ClassificationTask {
        weak_train,
        strong_train,
        test,
        n_features,
        n_classes: 2,
    })
}

/// Reconstructs a [`SlotfillTask`] from a data directory.
pub fn load_slotfill_task(dir: &Path) -> Result<SlotfillTask> {
    Ok(SlotfillTask {
        weak_train: crate::jsonl::read_jsonl(&dir.join("weak_train.jsonl"))?,
        strong_train: crate::jsonl::read_jsonl(&dir.join("strong_train.jsonl"))?,
        test: crate::jsonl::read_jsonl(&dir.join("test.jsonl"))?,
    })
}
