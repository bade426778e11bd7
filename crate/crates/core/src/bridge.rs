//! Three-stage transfer of per-token probabilities across tokenizers.
//!
//! Stage 1 multiplies weak wordpiece probabilities into word scores. Stage 2
//! re-segments each word with the strong tokenizer and splits the word score
//! over the strong pieces by the strong model's own per-step confidence.
//! Stage 3 turns each transferred target probability into a full soft label
//! by scaling the strong output distribution over the off-target entries.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::label_types::{
    ClassDistribution, SoftLabelPosition, SoftSequenceLabel, WeakLabelSequence,
};
use crate::models::StepModel;
use crate::tokenizer::ToyTokenizer;
use crate::Result;

/// Per-piece log-probs below this are floored to avoid degenerate splits.
pub const LOGPROB_FLOOR: f64 = -30.0;

/// A word reassembled from weak pieces with its aggregated log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    /// log P(W) = Σ piece log-probs (product in linear domain).
    pub logprob: f64,
    pub source_piece_ids: Vec<usize>,
}

/// Stage 1: group weak pieces into words and sum their log-probabilities.
pub fn aggregate_words(
    weak_seq: &WeakLabelSequence,
    tokenizer: &ToyTokenizer,
) -> Result<Vec<WordScore>> {
    let mut words: Vec<WordScore> = Vec::new();
    for (&id, &lp) in weak_seq.token_ids.iter().zip(&weak_seq.token_logprobs) {
        let piece = tokenizer.piece(id)?;
        let lp = lp.max(LOGPROB_FLOOR);
        if let Some(cont) = piece.strip_prefix(tokenizer.continuation_marker()) {
            let last = words.last_mut().ok_or_else(|| {
                CoreError::MalformedSequence(format!(
                    "continuation piece {piece:?} at sequence start"
                ))
            })?;
            last.word.push_str(cont);
            last.logprob += lp;
            last.source_piece_ids.push(id);
        } else {
            words.push(WordScore {
                word: piece.to_string(),
                logprob: lp,
                source_piece_ids: vec![id],
            });
        }
    }
    Ok(words)
}

/// Stage 2: split log P(W) over n strong pieces by softmin of the strong
/// model's confidences, so less confident positions absorb more of the
/// (negative) word log-probability.
pub fn split_word_logprob(word_logprob: f64, strong_confidences: &[f64]) -> Result<Vec<f64>> {
    if strong_confidences.is_empty() {
        return Err(CoreError::EmptySequence("no strong confidences".into()));
    }
    if word_logprob > 0.0 {
        return Err(CoreError::ShapeMismatch(format!(
            "word log-probability {word_logprob} must be <= 0"
        )));
    }
    for &c in strong_confidences {
        if !(c > 0.0 && c <= 1.0) {
            return Err(CoreError::ShapeMismatch(format!(
                "confidence {c} not in (0, 1]"
            )));
        }
    }
    let weights: Vec<f64> = strong_confidences.iter().map(|c| (-c).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total * word_logprob).collect())
}

/// How the per-position label is materialized from the transferred
/// probability (the soft-label ablation axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftLabelMode {
    /// Discard probabilities entirely; the target gets mass one.
    OneHot,
    /// Keep the target probability; spread the rest uniformly.
    TargetProbUniform,
    /// Keep the target probability; scale the strong output distribution
    /// over the off-target entries.
    Full,
}

/// Stage 3: full soft label from a target probability and the strong output
/// distribution. Off-target entries receive (1 − p) · strong_k / (1 − strong_t);
/// if the strong model puts all mass on the target the remainder is spread
/// uniformly.
pub fn build_soft_label(
    target_prob: f64,
    strong_dist: &ClassDistribution,
    target_id: usize,
) -> Result<SoftLabelPosition> {
    soft_label_with_mode(SoftLabelMode::Full, target_prob, strong_dist, target_id)
}

/// [`build_soft_label`] with an explicit construction mode.
pub fn soft_label_with_mode(
    mode: SoftLabelMode,
    target_prob: f64,
    strong_dist: &ClassDistribution,
    target_id: usize,
) -> Result<SoftLabelPosition> {
    let k = strong_dist.len();
    if target_id >= k {
        return Err(CoreError::ShapeMismatch(format!(
            "target id {target_id} outside vocab arity {k}"
        )));
    }
    if !(target_prob > 0.0 && target_prob <= 1.0) {
        return Err(CoreError::DegenerateDistribution(format!(
            "target probability {target_prob} not in (0, 1]"
        )));
    }
    let mut off = vec![0.0; k];
    let target_prob = match mode {
        SoftLabelMode::OneHot => 1.0,
        SoftLabelMode::TargetProbUniform => {
            if k > 1 {
                let share = (1.0 - target_prob) / (k - 1) as f64;
                for (i, o) in off.iter_mut().enumerate() {
                    if i != target_id {
                        *o = share;
                    }
                }
            }
            target_prob
        }
        SoftLabelMode::Full => {
            let denom: f64 = strong_dist
                .probs()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != target_id)
                .map(|(_, p)| *p)
                .sum();
            let remainder = 1.0 - target_prob;
            if denom > 0.0 {
                for (i, o) in off.iter_mut().enumerate() {
                    if i != target_id {
                        *o = remainder * strong_dist.probs()[i] / denom;
                    }
                }
            } else if k > 1 {
                // Strong model is certain of the target; fall back to uniform.
                let share = remainder / (k - 1) as f64;
                for (i, o) in off.iter_mut().enumerate() {
                    if i != target_id {
                        *o = share;
                    }
                }
            }
            target_prob
        }
    };
    SoftLabelPosition::new(target_id, target_prob, off)
}

/// A word re-segmented into strong pieces, carrying its transferred score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgedWord {
    pub word: String,
    pub piece_ids: Vec<usize>,
    pub word_logprob: f64,
}

/// Stage-1 output re-segmented with the strong tokenizer; the model-dependent
/// stages can then be re-run against any strong snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgedSequence {
    pub words: Vec<BridgedWord>,
}

impl BridgedSequence {
    /// Flat strong-piece target sequence.
    pub fn piece_ids(&self) -> Vec<usize> {
        self.words.iter().flat_map(|w| w.piece_ids.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.piece_ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Stages 2–3 against per-step output distributions (one per piece,
    /// teacher-forced in order). Confidence is the maximum of each step's
    /// distribution.
    pub fn soft_labels(
        &self,
        step_dists: &[ClassDistribution],
        mode: SoftLabelMode,
    ) -> Result<SoftSequenceLabel> {
        if step_dists.len() != self.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} step distributions vs {} bridged pieces",
                step_dists.len(),
                self.len()
            )));
        }
        let mut positions = Vec::with_capacity(self.len());
        let mut offset = 0usize;
        for word in &self.words {
            let n = word.piece_ids.len();
            let dists = &step_dists[offset..offset + n];
            let confidences: Vec<f64> = dists
                .iter()
                .map(|d| {
                    d.probs()
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let piece_logprobs = split_word_logprob(word.word_logprob, &confidences)?;
            for ((piece_id, lp), dist) in
                word.piece_ids.iter().zip(&piece_logprobs).zip(dists)
            {
                let target_prob = lp.exp().clamp(f64::MIN_POSITIVE, 1.0);
                positions.push(soft_label_with_mode(mode, target_prob, dist, *piece_id)?);
            }
            offset += n;
        }
        Ok(SoftSequenceLabel { positions })
    }
}

/// Stage 1 plus strong re-segmentation; model-independent.
pub fn prepare_bridged(
    weak_seq: &WeakLabelSequence,
    weak_tok: &ToyTokenizer,
    strong_tok: &ToyTokenizer,
) -> Result<BridgedSequence> {
    let word_scores = aggregate_words(weak_seq, weak_tok)?;
    let mut words = Vec::with_capacity(word_scores.len());
    for ws in word_scores {
        let piece_ids = strong_tok.segment_word(&ws.word)?;
        words.push(BridgedWord {
            word: ws.word,
            piece_ids,
            word_logprob: ws.logprob,
        });
    }
    Ok(BridgedSequence { words })
}

/// Full pipeline: aggregate weak pieces into words, re-segment with the
/// strong tokenizer, teacher-force the strong model to obtain per-step
/// confidences, split each word score and build per-position soft labels.
pub fn bridge_sequence<M: StepModel + ?Sized>(
    weak_seq: &WeakLabelSequence,
    weak_tok: &ToyTokenizer,
    strong_tok: &ToyTokenizer,
    strong_model: &M,
    prompt: &[usize],
) -> Result<SoftSequenceLabel> {
    let bridged = prepare_bridged(weak_seq, weak_tok, strong_tok)?;
    let target = bridged.piece_ids();
    let mut dists = Vec::with_capacity(target.len());
    for j in 0..target.len() {
        dists.push(strong_model.step_distribution(prompt, &target[..j])?);
    }
    bridged.soft_labels(&dists, SoftLabelMode::Full)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weak_seq(tok: &ToyTokenizer, pieces: &[&str], logprobs: &[f64]) -> WeakLabelSequence {
        let ids: Vec<usize> = pieces
            .iter()
            .map(|p| tok.piece_id(p).unwrap_or_else(|| panic!("piece {p}")))
            .collect();
        WeakLabelSequence::new(ids, logprobs.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_single_piece_word() {
        let tok = ToyTokenizer::shipped_weak();
        let seq = weak_seq(&tok, &["no"], &[-0.1]);
        let words = aggregate_words(&seq, &tok).unwrap();
        assert_eq!(words.len(), 1);
        assert_eq!(words[0].word, "no");
        assert!((words[0].logprob + 0.1).abs() < 1e-15);
    }

    #[test]
    fn aggregate_sums_piece_logprobs() {
        let tok = ToyTokenizer::shipped_weak();
        let seq = weak_seq(&tok, &["he", "##llo"], &[-0.2, -0.3]);
        let words = aggregate_words(&seq, &tok).unwrap();
        assert_eq!(words.len(), 1);
        assert_eq!(words[0].word, "hello");
        assert!((words[0].logprob + 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate_three_words_against_manual_grouping() {
        let tok = ToyTokenizer::shipped_weak();
        let seq = weak_seq(
            &tok,
            &["se", "##t", "ti", "##me", "no", "##on"],
            &[-0.1, -0.2, -0.3, -0.4, -0.5, -0.6],
        );
        let words = aggregate_words(&seq, &tok).unwrap();
        let got: Vec<(String, f64)> = words.iter().map(|w| (w.word.clone(), w.logprob)).collect();
        assert_eq!(got[0].0, "set");
        assert_eq!(got[1].0, "time");
        assert_eq!(got[2].0, "noon");
        assert!((got[0].1 + 0.3).abs() < 1e-12);
        assert!((got[1].1 + 0.7).abs() < 1e-12);
        assert!((got[2].1 + 1.1).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_dangling_continuation() {
        let tok = ToyTokenizer::shipped_weak();
        let seq = weak_seq(&tok, &["##llo"], &[-0.1]);
        assert!(matches!(
            aggregate_words(&seq, &tok),
            Err(CoreError::MalformedSequence(_))
        ));
    }

    #[test]
    fn split_single_piece_gets_whole_word() {
        let lps = split_word_logprob(-1.3, &[0.4]).unwrap();
        assert_eq!(lps, vec![-1.3]);
    }

    #[test]
    fn split_equal_confidences_halves() {
        let lps = split_word_logprob(-1.0, &[0.7, 0.7]).unwrap();
        assert!((lps[0] + 0.5).abs() < 1e-12);
        assert!((lps[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn split_frozen_example() {
        // weights e^{-0.9}, e^{-0.5} on log P(W) = -1
        let lps = split_word_logprob(-1.0, &[0.9, 0.5]).unwrap();
        assert!((lps[0] + 0.40131233988754815).abs() < 1e-10);
        assert!((lps[1] + 0.5986876601124519).abs() < 1e-10);
    }

    #[test]
    fn split_conserves_word_logprob() {
        let lp = -2.345;
        let lps = split_word_logprob(lp, &[0.3, 0.9, 0.55, 1.0]).unwrap();
        assert!((lps.iter().sum::<f64>() - lp).abs() < 1e-12);
    }

    #[test]
    fn split_monotone_in_confidence() {
        let lps = split_word_logprob(-1.7, &[0.9, 0.2]).unwrap();
        // higher confidence keeps more probability (less negative log)
        assert!(lps[0] > lps[1]);
    }

    #[test]
    fn soft_label_one_hot_when_certain() {
        let dist = ClassDistribution::uniform(4);
        let pos = build_soft_label(1.0, &dist, 2).unwrap();
        assert_eq!(pos.target_prob, 1.0);
        assert!(pos.off_target.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn soft_label_scales_uniform_strong_dist() {
        // (1 − 0.7) · 0.25 / 0.75 = 0.1 per off-target entry
        let dist = ClassDistribution::uniform(4);
        let pos = build_soft_label(0.7, &dist, 1).unwrap();
        for (i, p) in pos.off_target.iter().enumerate() {
            if i == 1 {
                assert_eq!(*p, 0.0);
            } else {
                assert!((p - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_label_degenerate_strong_dist_falls_back_to_uniform() {
        let dist = ClassDistribution::one_hot(3, 0);
        let pos = build_soft_label(0.4, &dist, 0).unwrap();
        assert!((pos.off_target[1] - 0.3).abs() < 1e-12);
        assert!((pos.off_target[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn soft_label_mass_is_unit_on_random_cases() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let k = rng.gen_range(2..8);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let dist = crate::label_types::normalize(&raw).unwrap();
            let target = rng.gen_range(0..k);
            let tp = rng.gen_range(0.05..1.0);
            let pos = build_soft_label(tp, &dist, target).unwrap();
            let mass = tp + pos.off_target.iter().sum::<f64>();
            assert!((mass - 1.0).abs() < 1e-9);
        }
    }
}
