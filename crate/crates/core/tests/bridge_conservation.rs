//! Conservation and golden-trace checks for the cross-tokenizer bridge.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ws2s_core::bridge::{bridge_sequence, prepare_bridged};
use ws2s_core::label_types::WeakLabelSequence;
use ws2s_core::models::{GeneratorConfig, GeneratorModel, HeadMode, StepModel};
use ws2s_core::tokenizer::{ToyTokenizer, ALPHABET};

fn strong_generator(seed: u64, strong_tok: &ToyTokenizer) -> GeneratorModel {
    let vocab = strong_tok.vocab_size() + 3;
    GeneratorModel::new(
        GeneratorConfig {
            vocab,
            embed: 8,
            window: 6,
            hidden: 16,
            pad_id: vocab - 3,
            head: HeadMode::Softmax,
        },
        seed,
    )
}

fn random_sentence(rng: &mut ChaCha20Rng) -> String {
    let letters: Vec<char> = ALPHABET.chars().collect();
    let n_words = rng.gen_range(1..=4);
    (0..n_words)
        .map(|_| {
            let len = rng.gen_range(1..=7);
            (0..len)
                .map(|_| letters[rng.gen_range(0..letters.len())])
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn weak_sequence_for(
    text: &str,
    weak_tok: &ToyTokenizer,
    rng: &mut ChaCha20Rng,
) -> WeakLabelSequence {
    let ids = weak_tok.segment(text).unwrap();
    let lps: Vec<f64> = ids.iter().map(|_| -rng.gen_range(0.01..3.0)).collect();
    WeakLabelSequence::new(ids, lps).unwrap()
}

#[test]
fn word_logprob_conservation_and_unit_mass_on_random_sentences() {
    let weak_tok = ToyTokenizer::shipped_weak();
    let strong_tok = ToyTokenizer::shipped_strong();
    let model = strong_generator(3, &strong_tok);
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let text = random_sentence(&mut rng);
        let weak_seq = weak_sequence_for(&text, &weak_tok, &mut rng);
        let bridged = prepare_bridged(&weak_seq, &weak_tok, &strong_tok).unwrap();
        let label = bridge_sequence(&weak_seq, &weak_tok, &strong_tok, &model, &[]).unwrap();

        // per-word: Σ log P(sᵢ) over the word's strong pieces equals log P(W)
        let mut offset = 0usize;
        for word in &bridged.words {
            let n = word.piece_ids.len();
            let sum: f64 = label.positions[offset..offset + n]
                .iter()
                .map(|p| p.target_prob.ln())
                .sum();
            assert!(
                (sum - word.word_logprob).abs() < 1e-12,
                "word {:?}: Σ log P(sᵢ) = {sum} vs log P(W) = {}",
                word.word,
                word.word_logprob
            );
            offset += n;
        }

        // every position carries unit mass
        for pos in &label.positions {
            let mass = pos.target_prob + pos.off_target.iter().sum::<f64>();
            assert!((mass - 1.0).abs() < 1e-9);
            let dist = pos.to_distribution();
            assert_eq!(dist.len(), model.vocab_size());
        }

        // output length equals the strong tokenization of the detokenized text
        let detok = weak_tok.detokenize(&weak_seq.token_ids).unwrap();
        assert_eq!(detok, text);
        let strong_len = strong_tok.segment(&text).unwrap().len();
        assert_eq!(label.positions.len(), strong_len);
    }
}

#[test]
fn identical_tokenizers_preserve_word_mass() {
    let tok = ToyTokenizer::shipped_weak();
    let model = strong_generator(11, &tok);
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..50 {
        let text = random_sentence(&mut rng);
        let weak_seq = weak_sequence_for(&text, &tok, &mut rng);
        let bridged = prepare_bridged(&weak_seq, &tok, &tok).unwrap();
        let label = bridge_sequence(&weak_seq, &tok, &tok, &model, &[]).unwrap();
        // same pieces, and the word mass is redistributed within each word
        assert_eq!(bridged.piece_ids(), weak_seq.token_ids);
        let mut offset = 0usize;
        for word in &bridged.words {
            let n = word.piece_ids.len();
            let weak_word_lp: f64 = weak_seq.token_logprobs[offset..offset + n].iter().sum();
            let bridged_lp: f64 = label.positions[offset..offset + n]
                .iter()
                .map(|p| p.target_prob.ln())
                .sum();
            assert!((weak_word_lp - bridged_lp).abs() < 1e-12);
            offset += n;
        }
    }
}

/// With an all-zero model every step distribution is uniform, so each word's
/// score splits evenly and the off-target scaling is uniform; every quantity
/// below is hand-computable.
#[test]
fn golden_trace_with_uniform_model() {
    let weak_tok = ToyTokenizer::shipped_weak();
    let strong_tok = ToyTokenizer::shipped_strong();
    let mut model = strong_generator(0, &strong_tok);
    model.set_params(&vec![0.0; model.parameter_count()]);
    let k = model.vocab_size() as f64;

    // "hello time noon": weak pieces he ##llo | ti ##me | no ##on
    let text = "hello time noon";
    let ids = weak_tok.segment(text).unwrap();
    assert_eq!(ids.len(), 6);
    let lps = vec![-0.2, -0.3, -0.4, -0.5, -0.6, -0.7];
    let weak_seq = WeakLabelSequence::new(ids, lps).unwrap();
    let label = bridge_sequence(&weak_seq, &weak_tok, &strong_tok, &model, &[]).unwrap();

    // strong pieces: hell ##o | time | noon → 4 positions
    assert_eq!(label.positions.len(), 4);
    // word log-probs: -0.5, -0.9, -1.3; "hello" splits evenly over 2 pieces
    let expect_tp = [
        (-0.25f64).exp(),
        (-0.25f64).exp(),
        (-0.9f64).exp(),
        (-1.3f64).exp(),
    ];
    for (pos, expect) in label.positions.iter().zip(expect_tp) {
        assert!((pos.target_prob - expect).abs() < 1e-12);
        // uniform strong output: off-target entries all equal (1−p)/(K−1)
        let share = (1.0 - pos.target_prob) / (k - 1.0);
        for (i, o) in pos.off_target.iter().enumerate() {
            if i == pos.target_token_id {
                assert_eq!(*o, 0.0);
            } else {
                assert!((o - share).abs() < 1e-12);
            }
        }
    }

    let strong_pieces: Vec<&str> = label
        .positions
        .iter()
        .map(|p| strong_tok.piece(p.target_token_id).unwrap())
        .collect();
    assert_eq!(strong_pieces, vec!["hell", "##o", "time", "noon"]);
}

/// Independent re-derivation of the split weights and scaling for a seeded
/// (non-uniform) model, exercising the full three-stage path.
#[test]
fn golden_trace_against_independent_arithmetic() {
    let weak_tok = ToyTokenizer::shipped_weak();
    let strong_tok = ToyTokenizer::shipped_strong();
    let model = strong_generator(99, &strong_tok);

    let text = "hello salad";
    let ids = weak_tok.segment(text).unwrap();
    let lps: Vec<f64> = (0..ids.len()).map(|i| -0.3 * (i + 1) as f64).collect();
    let weak_seq = WeakLabelSequence::new(ids.clone(), lps.clone()).unwrap();
    let label = bridge_sequence(&weak_seq, &weak_tok, &strong_tok, &model, &[]).unwrap();

    // independent grouping: words and their scores
    let mut words: Vec<(String, f64)> = Vec::new();
    for (&id, &lp) in ids.iter().zip(&lps) {
        let piece = weak_tok.piece(id).unwrap();
        if let Some(cont) = piece.strip_prefix("##") {
            let last = words.last_mut().unwrap();
            last.0.push_str(cont);
            last.1 += lp;
        } else {
            words.push((piece.to_string(), lp));
        }
    }

    // independent stage 2/3 evaluation via raw teacher forcing
    let mut target: Vec<usize> = Vec::new();
    let mut expected: Vec<f64> = Vec::new();
    for (word, wlp) in &words {
        let piece_ids = strong_tok.segment_word(word).unwrap();
        let start = target.len();
        let mut confs = Vec::new();
        for (j, &pid) in piece_ids.iter().enumerate() {
            let _ = j;
            let dist = model.step_distribution(&[], &target).unwrap();
            confs.push(
                dist.probs()
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
            );
            target.push(pid);
        }
        let _ = start;
        let weights: Vec<f64> = confs.iter().map(|c| (-c).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &weights {
            expected.push((w / total * wlp).exp());
        }
    }
    assert_eq!(label.positions.len(), expected.len());
    for (pos, e) in label.positions.iter().zip(expected) {
        assert!((pos.target_prob - e).abs() < 1e-12);
    }
}

#[test]
fn split_monotonicity_across_positions() {
    let strong_tok = ToyTokenizer::shipped_strong();
    let weak_tok = ToyTokenizer::shipped_weak();
    let model = strong_generator(5, &strong_tok);
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    for _ in 0..100 {
        let text = random_sentence(&mut rng);
        let weak_seq = weak_sequence_for(&text, &weak_tok, &mut rng);
        let bridged = prepare_bridged(&weak_seq, &weak_tok, &strong_tok).unwrap();
        let target = bridged.piece_ids();
        let mut confs = Vec::new();
        for j in 0..target.len() {
            let d = model.step_distribution(&[], &target[..j]).unwrap();
            confs.push(d.probs().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        let label = bridge_sequence(&weak_seq, &weak_tok, &strong_tok, &model, &[]).unwrap();
        let mut offset = 0usize;
        for word in &bridged.words {
            let n = word.piece_ids.len();
            if word.word_logprob < 0.0 {
                for a in 0..n {
                    for b in 0..n {
                        if confs[offset + a] > confs[offset + b] {
                            assert!(
                                label.positions[offset + a].target_prob.ln()
                                    > label.positions[offset + b].target_prob.ln() - 1e-15,
                                "higher confidence must keep more probability"
                            );
                        }
                    }
                }
            }
            offset += n;
        }
    }
}
