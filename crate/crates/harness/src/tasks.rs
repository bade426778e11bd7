//! Synthetic task generators: a planted nonlinear binary classification
//! problem and a templated slot-filling corpus over the toy alphabet.
//! All generation is a pure function of the seed.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use ws2s_core::metrics::SlotPrediction;
use ws2s_core::tokenizer::ToyTokenizer;

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

/// Three disjoint splits: teacher training, weak-label generation (student
/// training), and held-out test.
#[derive(Debug, Clone)]
pub struct ClassificationTask {
    pub weak_train: Vec<ClassificationRecord>,
    pub strong_train: Vec<ClassificationRecord>,
    pub test: Vec<ClassificationRecord>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Planted decision rule: a smooth nonlinear score thresholded at zero. Only
/// the first four features carry signal; the rest are distractors.
fn planted_score(x: &[f64]) -> f64 {
    let a = x[0] * x[1];
    let b = 0.8 * (std::f64::consts::PI * x[2]).sin();
    let c = 0.5 * x[3];
    a + b + c
}

fn draw_record(rng: &mut ChaCha20Rng, id: u64, n_features: usize) -> ClassificationRecord {
    let features: Vec<f64> = (0..n_features)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let label = usize::from(planted_score(&features) > 0.0);
    ClassificationRecord {
        id,
        features,
        label,
    }
}

/// Quota-balanced split: draws until each class holds half the target size.
fn balanced_split(
    rng: &mut ChaCha20Rng,
    next_id: &mut u64,
    size: usize,
    n_features: usize,
) -> Vec<ClassificationRecord> {
    let quota_1 = size / 2;
    let quota_0 = size - quota_1;
    let mut counts = [0usize; 2];
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let rec = draw_record(rng, *next_id, n_features);
        let quota = if rec.label == 0 { quota_0 } else { quota_1 };
        if counts[rec.label] < quota {
            counts[rec.label] += 1;
            *next_id += 1;
            out.push(rec);
        }
    }
    out
}

/// Deterministic balanced binary classification task with disjoint splits.
pub fn gen_classification_task(
    seed: u64,
    n_train_weak: usize,
    n_train_strong: usize,
    n_test: usize,
    n_features: usize,
) -> ClassificationTask {
    assert!(n_features >= 4, "the planted rule reads four features");
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x636c617373);
    let mut next_id = 0u64;
    let weak_train = balanced_split(&mut rng, &mut next_id, n_train_weak, n_features);
    let strong_train = balanced_split(&mut rng, &mut next_id, n_train_strong, n_features);
    let test = balanced_split(&mut rng, &mut next_id, n_test, n_features);
    ClassificationTask {
        weak_train,
        strong_train,
        test,
        n_features,
        n_classes: 2,
    }
}

/// One slot-filling utterance with its canonical target serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotfillRecord {
    pub id: u64,
    pub text: String,
    pub slots: BTreeMap<String, String>,
    pub target_text: String,
}

impl SlotfillRecord {
    pub fn slot_prediction(&self) -> SlotPrediction {
        SlotPrediction::new(self.slots.clone()).expect("generated slots are valid")
    }
}

#[derive(Debug, Clone)]
pub struct SlotfillTask {
    pub weak_train: Vec<SlotfillRecord>,
    pub strong_train: Vec<SlotfillRecord>,
    pub test: Vec<SlotfillRecord>,
}

/// The fixed slot inventory: (key, introducing word, values).
pub const SLOT_INVENTORY: [(&str, &str, &[&str]); 8] = [
    ("date", "on", &["today", "sunday", "monday", "may"]),
    ("meal", "eat", &["pasta", "soup", "salad", "stew"]),
    ("mode", "set", &["silent", "loud", "normal", "auto"]),
    ("name", "with", &["anna", "tom", "mary", "paul", "dana"]),
    ("room", "in", &["hall", "study", "dorm", "suite"]),
    ("seat", "near", &["aisle", "middle", "window", "upper"]),
    ("time", "at", &["noon", "dawn", "late", "ten"]),
    ("tune", "play", &["anthem", "sonata", "hymn", "melody"]),
];

/// Canonical key-sorted serialization, e.g. `date = today ; time = noon`.
pub fn serialize_slots(slots: &BTreeMap<String, String>) -> String {
    slots
        .iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect::<Vec<_>>()
        .join(" ; ")
}

/// Inverse of [`serialize_slots`]; malformed text yields an empty prediction
/// for the offending fragment rather than an error (decoded model output is
/// not trusted).
pub fn parse_slots(text: &str) -> SlotPrediction {
    let mut slots = BTreeMap::new();
    for chunk in text.split(';') {
        let mut parts = chunk.splitn(2, '=');
        let key = parts.next().unwrap_or("").trim();
        let value = parts.next().unwrap_or("").trim();
        if !key.is_empty() && !value.is_empty() && !key.contains(' ') {
            slots.insert(key.to_string(), value.to_string());
        }
    }
    SlotPrediction::new(slots).unwrap_or_else(|_| SlotPrediction::empty())
}

fn gen_slotfill_record(
    rng: &mut ChaCha20Rng,
    id: u64,
    weak_tok: &ToyTokenizer,
    strong_tok: &ToyTokenizer,
) -> SlotfillRecord {
    loop {
        let n_slots = match rng.gen_range(0..10) {
            0..=4 => 1,
            5..=7 => 2,
            _ => 3,
        };
        let mut picked: Vec<usize> = Vec::new();
        while picked.len() < n_slots {
            let i = rng.gen_range(0..SLOT_INVENTORY.len());
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        picked.sort_unstable();
        let mut slots = BTreeMap::new();
        let mut phrases = Vec::new();
        if rng.gen_bool(0.3) {
            phrases.push("please".to_string());
        }
        for &i in &picked {
            let (key, intro, values) = SLOT_INVENTORY[i];
            let value = values[rng.gen_range(0..values.len())];
            slots.insert(key.to_string(), value.to_string());
            phrases.push(format!("{intro} {value}"));
        }
        let text = phrases.join(" ");
        let target_text = serialize_slots(&slots);
        // keep prompts inside both context windows
        let weak_len = weak_tok.segment(&text).map(|v| v.len()).unwrap_or(usize::MAX);
        let strong_len = strong_tok
            .segment(&text)
            .map(|v| v.len())
            .unwrap_or(usize::MAX);
        if weak_len <= 11 && strong_len <= 15 {
            return SlotfillRecord {
                id,
                text,
                slots,
                target_text,
            };
        }
    }
}

/// Deterministic templated slot-filling corpus with disjoint splits.
pub fn gen_slotfill_task(
    seed: u64,
    n_train_weak: usize,
    n_train_strong: usize,
    n_test: usize,
) -> SlotfillTask {
    let weak_tok = ToyTokenizer::shipped_weak();
    let strong_tok = ToyTokenizer::shipped_strong();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x736c6f74);
    let mut next_id = 0u64;
    let split = |n: usize, rng: &mut ChaCha20Rng, next_id: &mut u64| {
        (0..n)
            .map(|_| {
                let rec = gen_slotfill_record(rng, *next_id, &weak_tok, &strong_tok);
                *next_id += 1;
                rec
            })
            .collect::<Vec<_>>()
    };
    let weak_train = split(n_train_weak, &mut rng, &mut next_id);
    let strong_train = split(n_train_strong, &mut rng, &mut next_id);
    let test = split(n_test, &mut rng, &mut next_id);
    SlotfillTask {
        weak_train,
        strong_train,
        test,
    }
}
