//! Sequence search and preference construction: beam search, teacher-forced
//! scoring, ensemble re-ranking over weak-model candidates, and DPO pair
//! building from strong-model samples.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::label_types::{EnsembleWeights, PreferencePair};
use crate::models::StepModel;
use crate::Result;

/// A decoded sequence with its per-token and aggregate log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub token_ids: Vec<usize>,
    pub per_token_logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub length_normalized_score: f64,
}

impl ScoredSequence {
    /// Total and normalized scores are derived from the per-token values, so
    /// the additivity invariant holds exactly.
    pub fn from_tokens(token_ids: Vec<usize>, per_token_logprobs: Vec<f64>) -> Result<Self> {
        if token_ids.len() != per_token_logprobs.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} tokens vs {} log-probs",
                token_ids.len(),
                per_token_logprobs.len()
            )));
        }
        if token_ids.is_empty() {
            return Err(CoreError::EmptySequence("scored sequence".into()));
        }
        let total_logprob: f64 = per_token_logprobs.iter().sum();
        let length_normalized_score = total_logprob / token_ids.len() as f64;
        Ok(Self {
            token_ids,
            per_token_logprobs,
            total_logprob,
            length_normalized_score,
        })
    }
}

/// Total order on scores via the IEEE monotone bit trick (−∞ sorts last;
/// scores are never NaN here).
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct OrderedScore(u64);

fn ordered(x: f64) -> OrderedScore {
    let bits = x.to_bits();
    let key = if x.is_sign_negative() {
        !bits
    } else {
        bits ^ (1 << 63)
    };
    OrderedScore(key)
}

/// Orders by score descending, breaking exact ties lexicographically on ids.
fn rank_key(score: f64, tokens: &[usize]) -> (std::cmp::Reverse<OrderedScore>, Vec<usize>) {
    (std::cmp::Reverse(ordered(score)), tokens.to_vec())
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    per_token: Vec<f64>,
    total: f64,
}

/// Length-bounded beam search over the model's next-token distributions.
///
/// A hypothesis finishes when it emits `end_id` or reaches `max_len`; results
/// are sorted by total log-probability descending with lexicographic
/// tie-breaks. With a beam at least as large as the full search space this
/// coincides with exhaustive enumeration.
pub fn beam_search<M: StepModel + ?Sized>(
    model: &M,
    prompt: &[usize],
    beam: usize,
    max_len: usize,
    end_id: usize,
) -> Result<Vec<ScoredSequence>> {
    if beam == 0 || max_len == 0 {
        return Err(CoreError::ShapeMismatch(
            "beam and max_len must be at least 1".into(),
        ));
    }
    if prompt.len() > model.context_window() {
        return Err(CoreError::ContextOverflow {
            prompt_len: prompt.len(),
            window: model.context_window(),
        });
    }
    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        per_token: Vec::new(),
        total: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if active.is_empty() {
            break;
        }
        let mut expansions: Vec<Hypothesis> = Vec::new();
        for hyp in &active {
            let dist = model.step_distribution(prompt, &hyp.tokens)?;
            for (tok, p) in dist.probs().iter().enumerate() {
                let lp = p.ln();
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                let mut per_token = hyp.per_token.clone();
                per_token.push(lp);
                expansions.push(Hypothesis {
                    tokens,
                    per_token,
                    total: hyp.total + lp,
                });
            }
        }
        expansions.sort_by(|a, b| rank_key(a.total, &a.tokens).cmp(&rank_key(b.total, &b.tokens)));
        expansions.truncate(beam);
        active = Vec::new();
        for hyp in expansions {
            if *hyp.tokens.last().unwrap() == end_id || hyp.tokens.len() == max_len {
                finished.push(hyp);
            } else {
                active.push(hyp);
            }
        }
    }
    finished.extend(active);
    finished.sort_by(|a, b| rank_key(a.total, &a.tokens).cmp(&rank_key(b.total, &b.tokens)));
    finished.truncate(beam);
    finished
        .into_iter()
        .map(|h| ScoredSequence::from_tokens(h.tokens, h.per_token))
        .collect()
}

/// Log-probability of `sequence` under teacher forcing on `model`.
pub fn teacher_force_score<M: StepModel + ?Sized>(
    model: &M,
    sequence: &[usize],
    prompt: &[usize],
) -> Result<ScoredSequence> {
    if sequence.is_empty() {
        return Err(CoreError::EmptySequence("sequence to score".into()));
    }
    let mut per_token = Vec::with_capacity(sequence.len());
    for (j, &tok) in sequence.iter().enumerate() {
        let dist = model.step_distribution(prompt, &sequence[..j])?;
        if tok >= dist.len() {
            return Err(CoreError::UnknownSymbol(format!("token id {tok}")));
        }
        per_token.push(dist.probs()[tok].ln());
    }
    ScoredSequence::from_tokens(sequence.to_vec(), per_token)
}

/// How per-teacher sequence scores are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Σ λᵢ · (log P(y|θᵢ)) / |y| — default; length-fair and underflow-free.
    LogLengthNormalized,
    /// Σ λᵢ · P(y|θᵢ) — the literal linear-domain aggregation.
    Linear,
}

/// Weighted ensemble score of one sequence under N weak teachers.
pub fn ensemble_score<M: StepModel>(
    sequence: &[usize],
    weak_models: &[M],
    weights: &EnsembleWeights,
    prompt: &[usize],
    mode: ScoreMode,
) -> Result<f64> {
    if weak_models.is_empty() || weak_models.len() != weights.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} models vs {} weights",
            weak_models.len(),
            weights.len()
        )));
    }
    let mut score = 0.0;
    for (model, lambda) in weak_models.iter().zip(weights.lambdas()) {
        let s = teacher_force_score(model, sequence, prompt)?;
        score += lambda
            * match mode {
                ScoreMode::LogLengthNormalized => s.length_normalized_score,
                ScoreMode::Linear => s.total_logprob.exp(),
            };
    }
    Ok(score)
}

/// Re-ranking joint decode: gather each teacher's top-M beams, deduplicate,
/// and return the candidate with the highest ensemble score.
///
/// The returned sequence carries λ-weighted per-token log-probabilities; in
/// log mode its `length_normalized_score` equals the winning ensemble score.
pub fn joint_decode<M: StepModel>(
    weak_models: &[M],
    weights: &EnsembleWeights,
    prompt: &[usize],
    beam: usize,
    max_len: usize,
    end_id: usize,
    mode: ScoreMode,
) -> Result<ScoredSequence> {
    if weak_models.is_empty() || weak_models.len() != weights.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} models vs {} weights",
            weak_models.len(),
            weights.len()
        )));
    }
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    for model in weak_models {
        for seq in beam_search(model, prompt, beam, max_len, end_id)? {
            if !candidates.contains(&seq.token_ids) {
                candidates.push(seq.token_ids);
            }
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for tokens in candidates {
        let score = ensemble_score(&tokens, weak_models, weights, prompt, mode)?;
        let better = match &best {
            None => true,
            Some((bs, bt)) => {
                score > *bs || (score == *bs && tokens < *bt)
            }
        };
        if better {
            best = Some((score, tokens));
        }
    }
    let (_, tokens) = best.ok_or_else(|| {
        CoreError::DegenerateCandidates("joint decode gathered no candidates".into())
    })?;
    ensemble_weighted_sequence(&tokens, weak_models, weights, prompt)
}

/// λ-weighted per-token log-probabilities of one sequence under the ensemble.
fn ensemble_weighted_sequence<M: StepModel>(
    tokens: &[usize],
    weak_models: &[M],
    weights: &EnsembleWeights,
    prompt: &[usize],
) -> Result<ScoredSequence> {
    let mut per_token = vec![0.0; tokens.len()];
    for (model, lambda) in weak_models.iter().zip(weights.lambdas()) {
        let s = teacher_force_score(model, tokens, prompt)?;
        for (acc, lp) in per_token.iter_mut().zip(&s.per_token_logprobs) {
            *acc += lambda * lp;
        }
    }
    ScoredSequence::from_tokens(tokens.to_vec(), per_token)
}

/// Ancestral sampling at temperature 1.0.
pub fn sample_sequence<M: StepModel + ?Sized>(
    model: &M,
    prompt: &[usize],
    max_len: usize,
    end_id: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<usize>> {
    if prompt.len() > model.context_window() {
        return Err(CoreError::ContextOverflow {
            prompt_len: prompt.len(),
            window: model.context_window(),
        });
    }
    let mut tokens = Vec::new();
    for _ in 0..max_len {
        let dist = model.step_distribution(prompt, &tokens)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut drawn = dist.len() - 1;
        for (tok, p) in dist.probs().iter().enumerate() {
            acc += p;
            if u < acc {
                drawn = tok;
                break;
            }
        }
        tokens.push(drawn);
        if drawn == end_id {
            break;
        }
    }
    Ok(tokens)
}

/// Samples M strong-model sequences and pairs the ensemble-best against the
/// ensemble-worst. Resamples (up to 4·M draws) until at least two distinct
/// candidates exist.
#[allow(clippy::too_many_arguments)]
pub fn build_preference_pair<S: StepModel, W: StepModel>(
    strong_model: &S,
    weak_models: &[W],
    weights: &EnsembleWeights,
    prompt: &[usize],
    num_samples: usize,
    max_len: usize,
    end_id: usize,
    mode: ScoreMode,
    sampling_seed: u64,
) -> Result<PreferencePair> {
    if num_samples < 2 {
        return Err(CoreError::ShapeMismatch(
            "need at least 2 samples for a preference pair".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(sampling_seed);
    let mut distinct: Vec<Vec<usize>> = Vec::new();
    let mut draws = 0usize;
    while draws < 4 * num_samples && (draws < num_samples || distinct.len() < 2) {
        let seq = sample_sequence(strong_model, prompt, max_len, end_id, &mut rng)?;
        draws += 1;
        if !seq.is_empty() && !distinct.contains(&seq) {
            distinct.push(seq);
        }
    }
    if distinct.len() < 2 {
        return Err(CoreError::DegenerateCandidates(format!(
            "only {} distinct sequence(s) after {draws} draws",
            distinct.len()
        )));
    }
    let mut scored: Vec<(f64, Vec<usize>)> = Vec::with_capacity(distinct.len());
    for tokens in distinct {
        let score = ensemble_score(&tokens, weak_models, weights, prompt, mode)?;
        scored.push((score, tokens));
    }
    scored.sort_by(|a, b| rank_key(a.0, &a.1).cmp(&rank_key(b.0, &b.1)));
    let (chosen_score, chosen) = scored.first().cloned().unwrap();
    let (rejected_score, rejected) = scored.last().cloned().unwrap();
    PreferencePair::new(chosen, rejected, chosen_score, rejected_score)
}
