//! File-level implementations of the individual pipeline subcommands, so
//! every stage of an experiment can also be driven by hand.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use ws2s_core::bridge::bridge_sequence;
use ws2s_core::decoding::{joint_decode, ScoreMode};
use ws2s_core::label_types::{
    ClassDistribution, EnsembleWeights, HardLabel, WeakLabelClassification, WeakLabelSequence,
};
use ws2s_core::metrics::{accuracy, agreement_matrix, slu_f1, AgreementInputs, SlotPrediction};
use ws2s_core::models::{
    load_classifier, load_generator, save_classifier, save_generator, ClassifierModel,
    GeneratorModel,
};
use ws2s_core::tokenizer::ToyTokenizer;

use crate::config::{ExperimentConfig, Method, TaskKind};
use crate::ensemble::{
    classifier_test_accuracy, emit_weak_classification_labels, emit_weak_sequence_labels,
    generator_test_slu, make_weak_classifier_ensemble, make_weak_generator_ensemble,
};
use crate::error::{HarnessError, Result};
use crate::experiment::{
    build_text_preference_pair, cdpo_stage, classification_student_samples,
    load_classification_task, load_slotfill_task, slotfill_student_samples,
    train_classifier_ceiling, train_classifier_student, train_generator_ceiling,
    train_generator_student,
};
use crate::jsonl::{
    read_jsonl, write_jsonl, BridgeInputLine, BridgeOutputLine, CandidateLine, ClsPredictionLine,
    PairLine, PromptLine, SlotPredictionLine, WeakClsLabelLine, WeakSeqLabelLine,
};
use crate::space::SeqSpace;
use crate::tasks::{gen_classification_task, gen_slotfill_task};

/// `gen-data`: write the three splits of a synthetic task.
pub fn stage_gen_data(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let sizes = cfg.task_section();
    match cfg.experiment.task {
        TaskKind::Classification => {
            let t = gen_classification_task(
                seed,
                sizes.n_weak_train,
                sizes.n_strong_train,
                sizes.n_test,
                sizes.n_features,
            );
            write_jsonl(&out.join("weak_train.jsonl"), t.weak_train.iter())?;
            write_jsonl(&out.join("strong_train.jsonl"), t.strong_train.iter())?;
            write_jsonl(&out.join("test.jsonl"), t.test.iter())?;
        }
        TaskKind::Slotfill => {
            let t = gen_slotfill_task(seed, sizes.n_weak_train, sizes.n_strong_train, sizes.n_test);
            write_jsonl(&out.join("weak_train.jsonl"), t.weak_train.iter())?;
            write_jsonl(&out.join("strong_train.jsonl"), t.strong_train.iter())?;
            write_jsonl(&out.join("test.jsonl"), t.test.iter())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct WeakMetricsFile {
    test_metric: Vec<f64>,
}

/// `train-weak`: train the weak ensemble from a data directory.
pub fn stage_train_weak(cfg: &ExperimentConfig, seed: u64, data: &Path, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match cfg.experiment.task {
        TaskKind::Classification => {
            let task = load_classification_task(data)?;
            let ens = make_weak_classifier_ensemble(cfg, &task, seed)?;
            for (i, m) in ens.models.iter().enumerate() {
                save_classifier(m, &out.join(format!("weak_{i}.bin")))
                    .map_err(HarnessError::stage("persist"))?;
            }
            let metrics = WeakMetricsFile {
                test_metric: ens.test_accuracy,
            };
            std::fs::write(
                out.join("weak_metrics.json"),
                serde_json::to_string_pretty(&metrics)? + "\n",
            )?;
        }
        TaskKind::Slotfill => {
            let task = load_slotfill_task(data)?;
            let space = SeqSpace::weak();
            let ens = make_weak_generator_ensemble(cfg, &task, &space, seed)?;
            for (i, m) in ens.models.iter().enumerate() {
                save_generator(m, &out.join(format!("weak_{i}.bin")))
                    .map_err(HarnessError::stage("persist"))?;
            }
            let metrics = WeakMetricsFile {
                test_metric: ens.test_slu,
            };
            std::fs::write(
                out.join("weak_metrics.json"),
                serde_json::to_string_pretty(&metrics)? + "\n",
            )?;
        }
    }
    Ok(())
}

fn load_weak_classifiers(dir: &Path, count: usize) -> Result<Vec<ClassifierModel>> {
    (0..count)
        .map(|i| {
            load_classifier(&dir.join(format!("weak_{i}.bin")))
                .map_err(HarnessError::stage("load-model"))
        })
        .collect()
}

fn load_weak_generators(dir: &Path, count: usize) -> Result<Vec<GeneratorModel>> {
    (0..count)
        .map(|i| {
            load_generator(&dir.join(format!("weak_{i}.bin")))
                .map_err(HarnessError::stage("load-model"))
        })
        .collect()
}

/// `weak-labels`: run the saved teachers over the student split.
pub fn stage_weak_labels(
    cfg: &ExperimentConfig,
    data: &Path,
    models: &Path,
    out: &Path,
) -> Result<()> {
    match cfg.experiment.task {
        TaskKind::Classification => {
            let task = load_classification_task(data)?;
            let ens = crate::ensemble::WeakClassifierEnsemble {
                models: load_weak_classifiers(models, cfg.weak.count)?,
                test_accuracy: Vec::new(),
                noise_used: Vec::new(),
            };
            let labels = emit_weak_classification_labels(&ens, &task.strong_train)?;
            write_jsonl(
                out,
                task.strong_train.iter().zip(&labels).flat_map(|(r, ls)| {
                    ls.iter().enumerate().map(move |(mi, l)| WeakClsLabelLine {
                        id: r.id,
                        model: mi,
                        hard: l.hard.class_index,
                        confidence: l.confidence.probs().to_vec(),
                    })
                }),
            )?;
        }
        TaskKind::Slotfill => {
            let task = load_slotfill_task(data)?;
            let space = SeqSpace::weak();
            let ens = crate::ensemble::WeakGeneratorEnsemble {
                models: load_weak_generators(models, cfg.weak.count)?,
                test_slu: Vec::new(),
            };
            let labels = emit_weak_sequence_labels(
                &ens,
                &space,
                &task.strong_train,
                cfg.decode.beam,
                cfg.decode.max_len,
            )?;
            write_jsonl(
                out,
                task.strong_train.iter().zip(&labels).flat_map(|(r, ls)| {
                    ls.iter().enumerate().map(move |(mi, l)| WeakSeqLabelLine {
                        id: r.id,
                        model: mi,
                        token_ids: l.token_ids.clone(),
                        token_logprobs: l.token_logprobs.clone(),
                    })
                }),
            )?;
        }
    }
    Ok(())
}

/// `bridge`: transfer weak per-token probabilities into strong-space soft
/// labels, standalone over JSONL.
pub fn stage_bridge(
    input: &Path,
    output: &Path,
    strong_model: &Path,
    weak_vocab: Option<&Path>,
    strong_vocab: Option<&Path>,
) -> Result<()> {
    let weak_tok = match weak_vocab {
        Some(p) => ToyTokenizer::from_vocab_file(p, "##").map_err(HarnessError::stage("vocab"))?,
        None => ToyTokenizer::shipped_weak(),
    };
    let strong_tok = match strong_vocab {
        Some(p) => ToyTokenizer::from_vocab_file(p, "##").map_err(HarnessError::stage("vocab"))?,
        None => ToyTokenizer::shipped_strong(),
    };
    let model = load_generator(strong_model).map_err(HarnessError::stage("load-model"))?;
    let strong_space = SeqSpace::new(strong_tok.clone());
    let lines: Vec<BridgeInputLine> = read_jsonl(input)?;
    let mut out_lines = Vec::with_capacity(lines.len());
    for line in lines {
        let weak_seq = WeakLabelSequence::new(
            line.weak_token_ids.clone(),
            line.weak_logprobs.iter().map(|lp| lp.min(0.0)).collect(),
        )
        .map_err(HarnessError::stage("bridge"))?;
        let prompt = strong_space.prompt_ids(&line.text)?;
        let label = bridge_sequence(&weak_seq, &weak_tok, &strong_tok, &model, &prompt)
            .map_err(HarnessError::stage("bridge"))?;
        out_lines.push(BridgeOutputLine {
            text: line.text,
            positions: label.positions,
        });
    }
    write_jsonl(output, out_lines.into_iter())?;
    Ok(())
}

fn group_cls_labels(
    lines: Vec<WeakClsLabelLine>,
    ids: &[u64],
    count: usize,
) -> Result<Vec<Vec<WeakLabelClassification>>> {
    let mut by_id: BTreeMap<u64, Vec<(usize, WeakLabelClassification)>> = BTreeMap::new();
    for line in lines {
        let conf = ClassDistribution::new(line.confidence)
            .map_err(HarnessError::stage("weak-labels"))?;
        let label = WeakLabelClassification::new(HardLabel::new(line.hard), conf)
            .map_err(HarnessError::stage("weak-labels"))?;
        by_id.entry(line.id).or_default().push((line.model, label));
    }
    ids.iter()
        .map(|id| {
            let mut entry = by_id.remove(id).ok_or_else(|| HarnessError::StageOther {
                stage: "weak-labels",
                detail: format!("no weak labels for sample {id}"),
            })?;
            entry.sort_by_key(|(m, _)| *m);
            if entry.len() != count {
                return Err(HarnessError::StageOther {
                    stage: "weak-labels",
                    detail: format!("sample {id} has {} of {count} teacher votes", entry.len()),
                });
            }
            Ok(entry.into_iter().map(|(_, l)| l).collect())
        })
        .collect()
}

fn group_seq_labels(
    lines: Vec<WeakSeqLabelLine>,
    ids: &[u64],
    count: usize,
) -> Result<Vec<Vec<WeakLabelSequence>>> {
    let mut by_id: BTreeMap<u64, Vec<(usize, WeakLabelSequence)>> = BTreeMap::new();
    for line in lines {
        let label = WeakLabelSequence::new(line.token_ids, line.token_logprobs)
            .map_err(HarnessError::stage("weak-labels"))?;
        by_id.entry(line.id).or_default().push((line.model, label));
    }
    ids.iter()
        .map(|id| {
            let mut entry = by_id.remove(id).ok_or_else(|| HarnessError::StageOther {
                stage: "weak-labels",
                detail: format!("no weak labels for sample {id}"),
            })?;
            entry.sort_by_key(|(m, _)| *m);
            if entry.len() != count {
                return Err(HarnessError::StageOther {
                    stage: "weak-labels",
                    detail: format!("sample {id} has {} of {count} teacher labels", entry.len()),
                });
            }
            Ok(entry.into_iter().map(|(_, l)| l).collect())
        })
        .collect()
}

#[derive(Serialize)]
struct StrongMetricsFile {
    ceiling_metric: f64,
    student_metric: f64,
}

/// `train-strong`: ceiling plus student from stored data and weak labels.
pub fn stage_train_strong(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &Path,
    weak_labels: &Path,
    models: Option<&Path>,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match cfg.experiment.task {
        TaskKind::Classification => {
            let task = load_classification_task(data)?;
            let ids: Vec<u64> = task.strong_train.iter().map(|r| r.id).collect();
            let labels = group_cls_labels(read_jsonl(weak_labels)?, &ids, cfg.weak.count)?;
            let ceiling = train_classifier_ceiling(cfg, &task.strong_train, task.n_features, seed)?;
            let samples = classification_student_samples(cfg, &task.strong_train, &labels)?;
            let student = train_classifier_student(cfg, &samples, task.n_features, seed)?;
            save_classifier(&ceiling, &out.join("ceiling.bin"))
                .map_err(HarnessError::stage("persist"))?;
            save_classifier(&student, &out.join("student.bin"))
                .map_err(HarnessError::stage("persist"))?;
            let metrics = StrongMetricsFile {
                ceiling_metric: classifier_test_accuracy(&ceiling, &task.test)?,
                student_metric: classifier_test_accuracy(&student, &task.test)?,
            };
            std::fs::write(
                out.join("strong_metrics.json"),
                serde_json::to_string_pretty(&metrics)? + "\n",
            )?;
        }
        TaskKind::Slotfill => {
            let task = load_slotfill_task(data)?;
            let ids: Vec<u64> = task.strong_train.iter().map(|r| r.id).collect();
            let labels = group_seq_labels(read_jsonl(weak_labels)?, &ids, cfg.weak.count)?;
            let weak_space = SeqSpace::weak();
            let strong_space = SeqSpace::strong();
            let weak_models = if cfg.experiment.method == Method::JointDecoding {
                let dir = models.ok_or_else(|| {
                    HarnessError::Config("--models is required for joint decoding".into())
                })?;
                Some(load_weak_generators(dir, cfg.weak.count)?)
            } else {
                None
            };
            let ceiling = train_generator_ceiling(cfg, &task.strong_train, &strong_space, seed)?;
            let samples = slotfill_student_samples(
                cfg,
                &task.strong_train,
                &labels,
                &weak_space,
                &strong_space,
                weak_models.as_deref(),
            )?;
            let student = train_generator_student(cfg, &samples, &strong_space, seed)?;
            save_generator(&ceiling, &out.join("ceiling.bin"))
                .map_err(HarnessError::stage("persist"))?;
            save_generator(&student, &out.join("student.bin"))
                .map_err(HarnessError::stage("persist"))?;
            let metrics = StrongMetricsFile {
                ceiling_metric: generator_test_slu(
                    &ceiling,
                    &strong_space,
                    &task.test,
                    cfg.decode.beam,
                    cfg.decode.max_len,
                )?,
                student_metric: generator_test_slu(
                    &student,
                    &strong_space,
                    &task.test,
                    cfg.decode.beam,
                    cfg.decode.max_len,
                )?,
            };
            std::fs::write(
                out.join("strong_metrics.json"),
                serde_json::to_string_pretty(&metrics)? + "\n",
            )?;
        }
    }
    Ok(())
}

/// `jointdecode`: re-rank the union of teacher beams per prompt.
pub fn stage_jointdecode(
    cfg: &ExperimentConfig,
    prompts: &Path,
    models: &Path,
    out: &Path,
) -> Result<()> {
    let weak_space = SeqSpace::weak();
    let weak_models = load_weak_generators(models, cfg.weak.count)?;
    let weights = EnsembleWeights::average(weak_models.len());
    let lines: Vec<PromptLine> = read_jsonl(prompts)?;
    let mut out_lines = Vec::with_capacity(lines.len());
    for line in lines {
        let prompt = weak_space.prompt_ids(&line.text)?;
        let chosen = joint_decode(
            &weak_models,
            &weights,
            &prompt,
            cfg.decode.joint_beam,
            cfg.decode.max_len,
            weak_space.eos,
            ScoreMode::LogLengthNormalized,
        )
        .map_err(HarnessError::stage("jointdecode"))?;
        out_lines.push(CandidateLine {
            id: line.id,
            text: weak_space.decode_text(&chosen.token_ids),
            score: chosen.length_normalized_score,
            token_ids: chosen.token_ids,
        });
    }
    write_jsonl(out, out_lines.into_iter())?;
    Ok(())
}

/// `dpopairs`: sample the student per prompt and write scored pairs.
pub fn stage_dpopairs(
    cfg: &ExperimentConfig,
    prompts: &Path,
    student: &Path,
    models: &Path,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let dpo = cfg.dpo.clone().unwrap_or_else(|| crate::config::DpoSection {
        beta: 2.0,
        epsilon: 0.1,
        num_samples: 5,
        epochs: 2,
        learning_rate: 2e-3,
        num_prompts: usize::MAX,
    });
    let weak_space = SeqSpace::weak();
    let strong_space = SeqSpace::strong();
    let student = load_generator(student).map_err(HarnessError::stage("load-model"))?;
    let weak_models = load_weak_generators(models, cfg.weak.count)?;
    let weights = EnsembleWeights::average(weak_models.len());
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xd90);
    let lines: Vec<PromptLine> = read_jsonl(prompts)?;
    let mut out_lines = Vec::new();
    for line in lines {
        if let Some(pair) = build_text_preference_pair(
            &student,
            &weak_models,
            &weights,
            &line.text,
            &weak_space,
            &strong_space,
            dpo.num_samples,
            cfg.decode.max_len,
            &mut rng,
        )? {
            out_lines.push(PairLine {
                id: line.id,
                chosen_text: strong_space.decode_text(&pair.chosen),
                rejected_text: strong_space.decode_text(&pair.rejected),
                chosen: pair.chosen,
                rejected: pair.rejected,
                chosen_score: pair.chosen_score,
                rejected_score: pair.rejected_score,
            });
        }
    }
    write_jsonl(out, out_lines.into_iter())?;
    Ok(())
}

#[derive(Serialize)]
struct DpoMetricsFile {
    before_metric: f64,
    after_metric: f64,
}

/// `dpo`: the full conservative preference stage over a saved student.
pub fn stage_dpo(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &Path,
    student_path: &Path,
    models: &Path,
    out: &Path,
) -> Result<()> {
    let dpo_cfg = cfg
        .dpo
        .clone()
        .ok_or_else(|| HarnessError::Config("config has no [dpo] section".into()))?;
    std::fs::create_dir_all(out)?;
    let task = load_slotfill_task(data)?;
    let weak_space = SeqSpace::weak();
    let strong_space = SeqSpace::strong();
    let mut student = load_generator(student_path).map_err(HarnessError::stage("load-model"))?;
    let weak_models = load_weak_generators(models, cfg.weak.count)?;
    let before = generator_test_slu(
        &student,
        &strong_space,
        &task.test,
        cfg.decode.beam,
        cfg.decode.max_len,
    )?;
    cdpo_stage(
        cfg,
        &dpo_cfg,
        &mut student,
        &weak_models,
        &weak_space,
        &strong_space,
        &task.strong_train,
        seed,
    )?;
    let after = generator_test_slu(
        &student,
        &strong_space,
        &task.test,
        cfg.decode.beam,
        cfg.decode.max_len,
    )?;
    save_generator(&student, &out.join("student_dpo.bin"))
        .map_err(HarnessError::stage("persist"))?;
    std::fs::write(
        out.join("dpo_metrics.json"),
        serde_json::to_string_pretty(&DpoMetricsFile {
            before_metric: before,
            after_metric: after,
        })? + "\n",
    )?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    task: TaskKind,
    per_model_metric: Vec<f64>,
    agreement: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalized_agreement: Option<Vec<Vec<f64>>>,
}

/// `eval`: metrics plus a pairwise agreement matrix over prediction files.
pub fn stage_eval(
    task: TaskKind,
    refs_path: &Path,
    pred_paths: &[std::path::PathBuf],
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let names: Vec<String> = pred_paths
        .iter()
        .map(|p| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into())
        })
        .collect();
    let report = match task {
        TaskKind::Classification => {
            let refs: Vec<ClsPredictionLine> = read_jsonl(refs_path)?;
            let ref_labels: Vec<HardLabel> =
                refs.iter().map(|l| HardLabel::new(l.label)).collect();
            let mut outputs = Vec::new();
            let mut per_model = Vec::new();
            for p in pred_paths {
                let preds: Vec<ClsPredictionLine> = read_jsonl(p)?;
                let labels: Vec<HardLabel> =
                    preds.iter().map(|l| HardLabel::new(l.label)).collect();
                per_model.push(
                    accuracy(&labels, &ref_labels).map_err(HarnessError::stage("evaluate"))?,
                );
                outputs.push(labels);
            }
            let agreement = if outputs.len() >= 2 {
                agreement_matrix(&AgreementInputs::Classification(outputs))
                    .map_err(HarnessError::stage("agreement"))?
            } else {
                vec![vec![1.0]]
            };
            EvalReport {
                task,
                per_model_metric: per_model,
                agreement,
                normalized_agreement: None,
            }
        }
        TaskKind::Slotfill => {
            let refs: Vec<SlotPredictionLine> = read_jsonl(refs_path)?;
            let ref_slots: Vec<SlotPrediction> = refs
                .iter()
                .map(|l| SlotPrediction::new(l.slots.clone()))
                .collect::<ws2s_core::Result<_>>()
                .map_err(HarnessError::stage("evaluate"))?;
            let strong_space = SeqSpace::strong();
            let mut token_outputs: Vec<Vec<Vec<usize>>> = Vec::new();
            let mut per_model = Vec::new();
            for p in pred_paths {
                let preds: Vec<SlotPredictionLine> = read_jsonl(p)?;
                let slots: Vec<SlotPrediction> = preds
                    .iter()
                    .map(|l| SlotPrediction::new(l.slots.clone()))
                    .collect::<ws2s_core::Result<_>>()
                    .map_err(HarnessError::stage("evaluate"))?;
                per_model.push(slu_f1(&slots, &ref_slots).map_err(HarnessError::stage("evaluate"))?);
                // agreement over canonical target token sequences
                let tokens: Vec<Vec<usize>> = slots
                    .iter()
                    .map(|s| {
                        let text = crate::tasks::serialize_slots(&s.slots);
                        if text.is_empty() {
                            Vec::new()
                        } else {
                            strong_space.tokenizer.segment(&text).unwrap_or_default()
                        }
                    })
                    .collect();
                token_outputs.push(tokens);
            }
            let (agreement, normalized) = if token_outputs.len() >= 2 {
                let m = agreement_matrix(&AgreementInputs::Generation(token_outputs.clone()))
                    .map_err(HarnessError::stage("agreement"))?;
                let norm =
                    ws2s_core::metrics::normalized_generation_agreement(&m, &token_outputs);
                (m, Some(norm))
            } else {
                (vec![vec![0.0]], None)
            };
            EvalReport {
                task,
                per_model_metric: per_model,
                agreement,
                normalized_agreement: normalized,
            }
        }
    };
    std::fs::write(
        out.join("eval_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    crate::report::write_matrix_csv(&out.join("agreement.csv"), &names, &report.agreement)?;
    Ok(())
}
