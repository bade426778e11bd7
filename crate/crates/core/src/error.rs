use thiserror::Error;

/// Errors raised by the core types, losses, bridge, models and decoders.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Raw vector could not be normalized into a distribution.
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    /// Vector arities disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Training step outside the schedule's range.
    #[error("schedule range: step {step} not in [0, {total_steps}]")]
    ScheduleRange { step: usize, total_steps: usize },

    /// A sequence operation received zero positions.
    #[error("empty sequence: {0}")]
    EmptySequence(String),

    /// Dirichlet concentration outside the valid domain.
    #[error("invalid concentration: {0}")]
    InvalidConcentration(String),

    /// cDPO flip probability outside [0, 1].
    #[error("invalid epsilon: {0} not in [0, 1]")]
    InvalidEpsilon(f64),

    /// Character or token id unknown to the tokenizer or model.
    #[error("unknown symbol: {0}")]
    UnknownSymbol(String),

    /// Continuation piece without a word-initial piece in front of it.
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),

    /// Prompt does not fit the generator's context window.
    #[error("context overflow: prompt length {prompt_len} exceeds window {window}")]
    ContextOverflow { prompt_len: usize, window: usize },

    /// Sampling produced fewer than two distinct candidate sequences.
    #[error("degenerate candidates: {0}")]
    DegenerateCandidates(String),

    /// Loss evaluated to a non-finite value.
    #[error("non-finite loss at sample {sample_index}: {detail}")]
    NonFiniteLoss { sample_index: usize, detail: String },

    /// Performance gap denominator is zero.
    #[error("zero gap: weak and strong baselines are equal ({0})")]
    ZeroGap(f64),

    /// Model file could not be read or parsed.
    #[error("model io: {0}")]
    ModelIo(String),
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::ModelIo(e.to_string())
    }
}
