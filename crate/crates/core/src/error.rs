use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("feature `{0}` has no observed values in the statistics source")]
    FeatureAllMissing(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("degenerate switch data: no treatment switch events in the training records")]
    DegenerateSwitchData,

    #[error("behavior support violation: trajectory `{trajectory}` stage {stage} took action {action} with zero behavior probability")]
    SupportViolation {
        trajectory: String,
        stage: usize,
        action: usize,
    },

    #[error("no overlap mass: every importance weight is zero")]
    NoOverlapMass,

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model selection failed: {0}")]
    Selection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
