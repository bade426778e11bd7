//! Experiment harness: synthetic tasks, weak-teacher ensembles, end-to-end
//! pipelines (weak training → weak labels → bridging → student training →
//! conservative preference optimization), ablation grids, and reporting.

pub mod ablation;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod jsonl;
pub mod report;
pub mod space;
pub mod stages;
pub mod tasks;

pub use error::{HarnessError, Result};
