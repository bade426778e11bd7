//! Evaluation: accuracy, performance gap recovered, slot-filling F1 with
//! word- and character-level partial credit, edit distance, and pairwise
//! model-agreement matrices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::label_types::HardLabel;
use crate::Result;

/// Slot predictions for one utterance: unique keys, non-empty values.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub slots: BTreeMap<String, String>,
}

impl SlotPrediction {
    pub fn new(slots: BTreeMap<String, String>) -> Result<Self> {
        if slots.values().any(|v| v.trim().is_empty()) {
            return Err(CoreError::ShapeMismatch("empty slot value".into()));
        }
        Ok(Self { slots })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut slots = BTreeMap::new();
        for (k, v) in pairs {
            if slots.insert(k.into(), v.into()).is_some() {
                return Err(CoreError::ShapeMismatch("duplicate slot key".into()));
            }
        }
        Self::new(slots)
    }
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[HardLabel], refs: &[HardLabel]) -> Result<f64> {
    if preds.len() != refs.len() || preds.is_empty() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} predictions vs {} references",
            preds.len(),
            refs.len()
        )));
    }
    let hits = preds.iter().zip(refs).filter(|(p, r)| p == r).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Performance gap recovered: (P − P_w) / (P_s − P_w). May exceed 1 or be
/// negative.
pub fn pgr(p: f64, p_weak: f64, p_strong: f64) -> Result<f64> {
    if p_strong == p_weak {
        return Err(CoreError::ZeroGap(p_strong));
    }
    Ok((p - p_weak) / (p_strong - p_weak))
}

/// Mean PGR over several weak baselines.
pub fn multiweak_pgr(p: f64, p_weaks: &[f64], p_strong: f64) -> Result<f64> {
    if p_weaks.is_empty() {
        return Err(CoreError::ShapeMismatch("no weak baselines".into()));
    }
    let mut total = 0.0;
    for &pw in p_weaks {
        total += pgr(p, pw, p_strong)?;
    }
    Ok(total / p_weaks.len() as f64)
}

/// Bag-overlap F1 between two token multisets.
fn bag_f1<T: Eq + std::hash::Hash>(pred: &[T], reference: &[T]) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut counts: std::collections::HashMap<&T, i64> = std::collections::HashMap::new();
    for t in reference {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0i64;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn word_f1(pred: &str, reference: &str) -> f64 {
    let pw: Vec<&str> = pred.split_whitespace().collect();
    let rw: Vec<&str> = reference.split_whitespace().collect();
    bag_f1(&pw, &rw)
}

fn char_f1(pred: &str, reference: &str) -> f64 {
    let pc: Vec<char> = pred.chars().collect();
    let rc: Vec<char> = reference.chars().collect();
    bag_f1(&pc, &rc)
}

/// Slot-filling F1 with partial credit.
///
/// Predicted and reference (slot, value) pairs are aligned by slot key per
/// utterance. Aligned pairs contribute the word-level and character-level F1
/// of their values as fractional true-positive credit; unmatched pairs count
/// as false positives / negatives. Corpus precision, recall and F1 are
/// computed once with word credit and once with character credit, and the
/// two F1 values are averaged.
pub fn slu_f1(preds: &[SlotPrediction], refs: &[SlotPrediction]) -> Result<f64> {
    if preds.len() != refs.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} predictions vs {} references",
            preds.len(),
            refs.len()
        )));
    }
    let mut word_tp = 0.0;
    let mut char_tp = 0.0;
    let mut n_pred = 0usize;
    let mut n_ref = 0usize;
    for (p, r) in preds.iter().zip(refs) {
        n_pred += p.slots.len();
        n_ref += r.slots.len();
        for (key, pv) in &p.slots {
            if let Some(rv) = r.slots.get(key) {
                word_tp += word_f1(pv, rv);
                char_tp += char_f1(pv, rv);
            }
        }
    }
    let f1_of = |tp: f64| -> f64 {
        if n_pred == 0 || n_ref == 0 {
            return 0.0;
        }
        let precision = tp / n_pred as f64;
        let recall = tp / n_ref as f64;
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    };
    if n_pred == 0 && n_ref == 0 {
        // no slots anywhere: vacuously perfect
        return Ok(1.0);
    }
    Ok(0.5 * (f1_of(word_tp) + f1_of(char_tp)))
}

/// Edit distance with unit insert/delete/substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Model outputs compared pairwise by the agreement matrix.
#[derive(Debug, Clone)]
pub enum AgreementInputs {
    /// Per-model hard predictions over a shared evaluation set.
    Classification(Vec<Vec<HardLabel>>),
    /// Per-model token sequences over a shared evaluation set.
    Generation(Vec<Vec<Vec<usize>>>),
}

/// Pairwise agreement: exact-match accuracy for classification (one model's
/// outputs as references), mean edit distance for generation.
pub fn agreement_matrix(inputs: &AgreementInputs) -> Result<Vec<Vec<f64>>> {
    match inputs {
        AgreementInputs::Classification(outputs) => {
            if outputs.len() < 2 {
                return Err(CoreError::ShapeMismatch("need at least 2 models".into()));
            }
            let n = outputs.len();
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    m[i][j] = accuracy(&outputs[i], &outputs[j])?;
                }
            }
            Ok(m)
        }
        AgreementInputs::Generation(outputs) => {
            if outputs.len() < 2 {
                return Err(CoreError::ShapeMismatch("need at least 2 models".into()));
            }
            let n = outputs.len();
            let samples = outputs[0].len();
            if samples == 0 || outputs.iter().any(|o| o.len() != samples) {
                return Err(CoreError::ShapeMismatch(
                    "models must share the evaluation set".into(),
                ));
            }
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let total: usize = (0..samples)
                        .map(|s| levenshtein(&outputs[i][s], &outputs[j][s]))
                        .sum();
                    m[i][j] = total as f64 / samples as f64;
                }
            }
            Ok(m)
        }
    }
}

/// Mean-distance matrix rescaled to an agreement score 1 − d / max_len.
///
/// The raw distances remain the primary report; this normalization is this
/// crate's convention for plotting both task types on a shared [0, 1] scale.
pub fn normalized_generation_agreement(
    distances: &[Vec<f64>],
    outputs: &[Vec<Vec<usize>>],
) -> Vec<Vec<f64>> {
    let samples = outputs.first().map(|o| o.len()).unwrap_or(0);
    let mut max_len = 1usize;
    for model in outputs {
        for seq in model {
            max_len = max_len.max(seq.len());
        }
    }
    let _ = samples;
    distances
        .iter()
        .map(|row| {
            row.iter()
                .map(|d| (1.0 - d / max_len as f64).max(0.0))
                .collect()
        })
        .collect()
}
