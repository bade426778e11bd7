//! Small dense models standing in for weak teachers and the strong student.
//!
//! Both model kinds are plain feedforward networks in double precision with
//! hand-written backward passes, so analytic parameter gradients can be
//! checked against central finite differences. A model instance is owned
//! exclusively while training; snapshots (parameter vectors) are immutable
//! values.

mod classifier;
mod generator;
mod persist;
mod train;

pub use classifier::{classifier_forward, ClassifierConfig, ClassifierModel};
pub use generator::{generator_step, GeneratorConfig, GeneratorModel};
pub use persist::{load_classifier, load_generator, save_classifier, save_generator};
pub use train::{
    accumulate_sequence_logprob_grad, classifier_gradients, fit_classifier, fit_generator,
    generator_gradients, ClassificationSample,
    ClassifierLossKind, ClassifierLossSpec, FitReport, GenSupervision, GenerationSample,
    GeneratorLossKind, GeneratorLossSpec, LossState, SgdConfig, Supervision,
};

use crate::label_types::ClassDistribution;
use crate::Result;

/// Output head of a model: point categorical or evidential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    Softmax,
    Edl,
}

/// An autoregressive scorer of next tokens given a fixed prompt and prefix.
///
/// Implementations slide their own context window over `prompt ++ prefix`;
/// callers never truncate.
pub trait StepModel {
    fn vocab_size(&self) -> usize;

    /// Pre-softmax logits for the next token.
    fn step_logits(&self, prompt: &[usize], prefix: &[usize]) -> Result<Vec<f64>>;

    /// Predictive next-token distribution (softmax of the logits, or the
    /// Dirichlet mean for an evidential head).
    fn step_distribution(&self, prompt: &[usize], prefix: &[usize]) -> Result<ClassDistribution>;

    /// Longest prompt the model can condition on; decoding refuses longer.
    fn context_window(&self) -> usize {
        usize::MAX
    }
}

/// Chain a gradient in α = exp(logits) + 1 back to the logits
/// (dα/dlogit = exp(logit); zero above the overflow clamp).
pub(crate) fn chain_evidence(grad_alpha: &[f64], logits: &[f64]) -> Vec<f64> {
    grad_alpha
        .iter()
        .zip(logits)
        .map(|(g, x)| {
            if *x < crate::label_types::EVIDENCE_LOGIT_CLAMP {
                g * x.exp()
            } else {
                0.0
            }
        })
        .collect()
}
