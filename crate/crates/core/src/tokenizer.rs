//! Deterministic toy subword tokenizers with greedy longest-match
//! segmentation and wordpiece-style continuation markers.
//!
//! Two distinct instances ship with the crate (a fine-grained "weak" vocab
//! and a coarser "strong" vocab over the same alphabet) so cross-tokenizer
//! transfer can be exercised without external assets.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::CoreError;
use crate::Result;

/// Subword vocabulary with greedy longest-match segmentation.
#[derive(Debug, Clone)]
pub struct ToyTokenizer {
    pieces: Vec<String>,
    marker: String,
    index: HashMap<String, usize>,
    alphabet: BTreeSet<char>,
}

impl ToyTokenizer {
    /// Builds a tokenizer from piece strings; continuation pieces carry the
    /// marker prefix. Duplicate pieces are rejected.
    pub fn new(pieces: Vec<String>, continuation_marker: &str) -> Result<Self> {
        let mut index = HashMap::new();
        let mut alphabet = BTreeSet::new();
        for (i, piece) in pieces.iter().enumerate() {
            if piece.is_empty() || piece == continuation_marker {
                return Err(CoreError::UnknownSymbol(format!(
                    "invalid piece at index {i}"
                )));
            }
            if index.insert(piece.clone(), i).is_some() {
                return Err(CoreError::UnknownSymbol(format!(
                    "duplicate piece {piece:?}"
                )));
            }
            for ch in piece.strip_prefix(continuation_marker).unwrap_or(piece).chars() {
                alphabet.insert(ch);
            }
        }
        Ok(Self {
            pieces,
            marker: continuation_marker.to_string(),
            index,
            alphabet,
        })
    }

    /// Loads a vocabulary from a plain-text file, one piece per line.
    pub fn from_vocab_file(path: &Path, continuation_marker: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let pieces = text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(pieces, continuation_marker)
    }

    /// Writes the vocabulary, one piece per line.
    pub fn write_vocab_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.pieces.join("\n") + "\n")?;
        Ok(())
    }

    pub fn continuation_marker(&self) -> &str {
        &self.marker
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece(&self, id: usize) -> Result<&str> {
        self.pieces
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| CoreError::UnknownSymbol(format!("piece id {id}")))
    }

    pub fn piece_id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    /// True if `id` is a continuation (non-word-initial) piece.
    pub fn is_continuation(&self, id: usize) -> Result<bool> {
        Ok(self.piece(id)?.starts_with(&self.marker))
    }

    /// Characters the tokenizer can segment.
    pub fn alphabet(&self) -> impl Iterator<Item = char> + '_ {
        self.alphabet.iter().copied()
    }

    /// Greedy longest-match segmentation of a single whitespace-free word.
    pub fn segment_word(&self, word: &str) -> Result<Vec<usize>> {
        if word.is_empty() {
            return Err(CoreError::UnknownSymbol("empty word".into()));
        }
        let chars: Vec<char> = word.chars().collect();
        for ch in &chars {
            if !self.alphabet.contains(ch) {
                return Err(CoreError::UnknownSymbol(format!(
                    "character {ch:?} in word {word:?}"
                )));
            }
        }
        let mut ids = Vec::new();
        let mut pos = 0usize;
        while pos < chars.len() {
            let initial = pos == 0;
            let mut matched = None;
            for end in (pos + 1..=chars.len()).rev() {
                let fragment: String = chars[pos..end].iter().collect();
                let key = if initial {
                    fragment
                } else {
                    format!("{}{}", self.marker, fragment)
                };
                if let Some(&id) = self.index.get(&key) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    ids.push(id);
                    pos = end;
                }
                None => {
                    return Err(CoreError::UnknownSymbol(format!(
                        "no piece covers {:?} at offset {pos} of {word:?}",
                        chars[pos]
                    )))
                }
            }
        }
        Ok(ids)
    }

    /// Segments whitespace-separated text into a flat id sequence.
    pub fn segment(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            ids.extend(self.segment_word(word)?);
        }
        if ids.is_empty() {
            return Err(CoreError::UnknownSymbol("no words in text".into()));
        }
        Ok(ids)
    }

    /// Inverse of [`segment`](Self::segment): words joined by single spaces.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut words: Vec<String> = Vec::new();
        for &id in ids {
            let piece = self.piece(id)?;
            if let Some(cont) = piece.strip_prefix(&self.marker) {
                let last = words.last_mut().ok_or_else(|| {
                    CoreError::MalformedSequence(format!(
                        "continuation piece {piece:?} at word start"
                    ))
                })?;
                last.push_str(cont);
            } else {
                words.push(piece.to_string());
            }
        }
        Ok(words.join(" "))
    }

    /// The fine-grained tokenizer shipped for weak teachers.
    pub fn shipped_weak() -> Self {
        let mut pieces: Vec<String> = Vec::new();
        for ch in ALPHABET.chars() {
            pieces.push(ch.to_string());
        }
        for ch in ALPHABET.chars() {
            pieces.push(format!("##{ch}"));
        }
        pieces.push(";".into());
        pieces.push("=".into());
        for p in [
            "he", "##llo", "ti", "##me", "no", "##on", "se", "re", "##mind", "pl", "##ay", "su",
            "##nday", "mo", "wi", "##ndow", "sa", "##lad", "pa", "##sta", "da", "##wn",
        ] {
            pieces.push(p.into());
        }
        Self::new(pieces, "##").expect("shipped weak vocab is well-formed")
    }

    /// The coarser tokenizer shipped for the strong student.
    pub fn shipped_strong() -> Self {
        let mut pieces: Vec<String> = Vec::new();
        for ch in ALPHABET.chars() {
            pieces.push(ch.to_string());
        }
        for ch in ALPHABET.chars() {
            pieces.push(format!("##{ch}"));
        }
        pieces.push(";".into());
        pieces.push("=".into());
        for p in [
            "hell", "noon", "dawn", "late", "time", "date", "name", "meal", "room", "tune",
            "seat", "mode", "today", "##ay", "play", "find", "meet", "with", "please", "remind",
            "set", "the", "for", "anna", "mary",
        ] {
            pieces.push(p.into());
        }
        Self::new(pieces, "##").expect("shipped strong vocab is well-formed")
    }
}

/// Letters covered by the shipped tokenizers and task generators.
pub const ALPHABET: &str = "adefhilmnoprstuwy";

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn single_piece_word_is_one_token() {
        let strong = ToyTokenizer::shipped_strong();
        let ids = strong.segment_word("noon").unwrap();
        assert_eq!(ids.len(), 1);
        assert_eq!(strong.piece(ids[0]).unwrap(), "noon");
    }

    #[test]
    fn hello_splits_as_expected_under_both_vocabularies() {
        let weak = ToyTokenizer::shipped_weak();
        let ids = weak.segment_word("hello").unwrap();
        let pieces: Vec<&str> = ids.iter().map(|&i| weak.piece(i).unwrap()).collect();
        assert_eq!(pieces, vec!["he", "##llo"]);

        let strong = ToyTokenizer::shipped_strong();
        let ids = strong.segment_word("hello").unwrap();
        let pieces: Vec<&str> = ids.iter().map(|&i| strong.piece(i).unwrap()).collect();
        assert_eq!(pieces, vec!["hell", "##o"]);
    }

    #[test]
    fn round_trips_random_words() {
        let weak = ToyTokenizer::shipped_weak();
        let strong = ToyTokenizer::shipped_strong();
        let letters: Vec<char> = ALPHABET.chars().collect();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let len = rng.gen_range(1..=10);
            let word: String = (0..len)
                .map(|_| letters[rng.gen_range(0..letters.len())])
                .collect();
            for tok in [&weak, &strong] {
                let ids = tok.segment_word(&word).unwrap();
                assert_eq!(tok.detokenize(&ids).unwrap(), word);
            }
        }
    }

    #[test]
    fn multi_word_text_round_trips() {
        let strong = ToyTokenizer::shipped_strong();
        let text = "time = noon ; name = tom";
        let ids = strong.segment(text).unwrap();
        assert_eq!(strong.detokenize(&ids).unwrap(), text);
    }

    #[test]
    fn unknown_character_is_rejected() {
        let weak = ToyTokenizer::shipped_weak();
        assert!(matches!(
            weak.segment_word("xyz"),
            Err(CoreError::UnknownSymbol(_))
        ));
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = std::env::temp_dir().join("ws2s_tok_vocab");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("weak.vocab");
        let weak = ToyTokenizer::shipped_weak();
        weak.write_vocab_file(&path).unwrap();
        let loaded = ToyTokenizer::from_vocab_file(&path, "##").unwrap();
        assert_eq!(loaded.vocab_size(), weak.vocab_size());
        assert_eq!(
            loaded.segment_word("hello").unwrap(),
            weak.segment_word("hello").unwrap()
        );
    }
}
