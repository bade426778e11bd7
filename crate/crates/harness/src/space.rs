//! Token-id space shared by a tokenizer and its generator models: the
//! tokenizer's pieces keep their ids, with pad/eos/sep appended after them.

use ws2s_core::tokenizer::ToyTokenizer;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone)]
pub struct SeqSpace {
    pub tokenizer: ToyTokenizer,
    pub vocab: usize,
    pub pad: usize,
    pub eos: usize,
    pub sep: usize,
}

impl SeqSpace {
    pub fn new(tokenizer: ToyTokenizer) -> Self {
        let pieces = tokenizer.vocab_size();
        Self {
            tokenizer,
            vocab: pieces + 3,
            pad: pieces,
            eos: pieces + 1,
            sep: pieces + 2,
        }
    }

    pub fn weak() -> Self {
        Self::new(ToyTokenizer::shipped_weak())
    }

    pub fn strong() -> Self {
        Self::new(ToyTokenizer::shipped_strong())
    }

    /// Utterance tokens followed by the separator.
    pub fn prompt_ids(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = self
            .tokenizer
            .segment(text)
            .map_err(HarnessError::stage("tokenize"))?;
        ids.push(self.sep);
        Ok(ids)
    }

    /// Target tokens followed by the end marker.
    pub fn target_ids(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = self
            .tokenizer
            .segment(text)
            .map_err(HarnessError::stage("tokenize"))?;
        ids.push(self.eos);
        Ok(ids)
    }

    /// Text pieces of a decoded sequence (specials stripped, stops at eos).
    pub fn text_ids(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for &id in ids {
            if id == self.eos {
                break;
            }
            if id < self.tokenizer.vocab_size() {
                out.push(id);
            }
        }
        out
    }

    /// Decoded surface text of a generated sequence.
    pub fn decode_text(&self, ids: &[usize]) -> String {
        let text_ids = self.text_ids(ids);
        if text_ids.is_empty() {
            return String::new();
        }
        self.tokenizer
            .detokenize(&text_ids)
            .unwrap_or_default()
    }
}
