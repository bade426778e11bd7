use thiserror::Error;

/// Harness-level failures, split by exit code: configuration problems exit
/// with 2, pipeline stage failures with 3.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: ws2s_core::CoreError,
    },

    #[error("stage {stage}: {detail}")]
    StageOther { stage: &'static str, detail: String },

    /// A weak teacher could not be corrupted into the target quality band.
    #[error(
        "weak model {index} outside target band after {attempts} attempts: \
         accuracy {accuracy:.4} not in [{lo:.2}, {hi:.2}] (noise tried: {noise_tried:?})"
    )]
    WeakBandFailure {
        index: usize,
        attempts: usize,
        accuracy: f64,
        lo: f64,
        hi: f64,
        noise_tried: Vec<f64>,
    },

    #[error("unknown ablation suite {0:?} (expected soft_label_stages, weight_schemes or beam_sizes)")]
    UnknownSuite(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::UnknownSuite(_) => 2,
            _ => 3,
        }
    }

    pub fn stage(stage: &'static str) -> impl FnOnce(ws2s_core::CoreError) -> HarnessError {
        move |source| HarnessError::Stage { stage, source }
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
