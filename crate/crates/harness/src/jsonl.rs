//! JSONL (one object per line, UTF-8) readers and writers for datasets,
//! weak labels, bridge payloads and decode outputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// One teacher's vote on one classification sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakClsLabelLine {
    pub id: u64,
    pub model: usize,
    pub hard: usize,
    pub confidence: Vec<f64>,
}

/// One teacher's generated label sequence for one utterance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakSeqLabelLine {
    pub id: u64,
    pub model: usize,
    pub token_ids: Vec<usize>,
    pub token_logprobs: Vec<f64>,
}

/// Input line for the `bridge` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeInputLine {
    pub text: String,
    pub weak_token_ids: Vec<usize>,
    pub weak_logprobs: Vec<f64>,
}

/// Output line for the `bridge` subcommand: per-position soft labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeOutputLine {
    pub text: String,
    pub positions: Vec<ws2s_core::label_types::SoftLabelPosition>,
}

/// Prompt line for `jointdecode`/`dpopairs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptLine {
    pub id: u64,
    pub text: String,
}

/// Scored candidate emitted by `jointdecode`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateLine {
    pub id: u64,
    pub token_ids: Vec<usize>,
    pub text: String,
    pub score: f64,
}

/// Preference pair emitted by `dpopairs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairLine {
    pub id: u64,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub chosen_text: String,
    pub rejected_text: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Prediction line for `eval` (classification).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClsPredictionLine {
    pub id: u64,
    pub label: usize,
}

/// Prediction line for `eval` (slot filling).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotPredictionLine {
    pub id: u64,
    pub slots: std::collections::BTreeMap<String, String>,
}
