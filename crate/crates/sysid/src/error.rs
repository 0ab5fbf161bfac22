use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Debug, Error)]
pub enum SysidError {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("unknown platform: {0}")]
    UnknownPlatform(String),

    #[error("invalid channel index {index} (profile has {channels} channels)")]
    InvalidChannel { index: usize, channels: usize },

    #[error("simulation diverged at step {step} (t = {time:.4} s)")]
    DivergedSimulation { step: usize, time: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("perception unrecoverable: {0}")]
    UnrecoverablePerception(String),

    #[error("insufficient overlap: {frames} frames ({seconds:.2} s) after alignment")]
    InsufficientOverlap { frames: usize, seconds: f64 },

    #[error("metric mismatch: {0}")]
    MetricMismatch(String),

    #[error("recommender unavailable: {0}")]
    RecommenderUnavailable(String),

    #[error("recommender response parse failure: {0}")]
    ParseFailure(String),

    #[error("no iteration with a finite error")]
    NoValidIteration,

    #[error("missing recording for control profile {0}")]
    MissingRecording(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for SysidError {
    fn from(e: serde_json::Error) -> Self {
        SysidError::Serde(e.to_string())
    }
}

impl From<csv::Error> for SysidError {
    fn from(e: csv::Error) -> Self {
        SysidError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SysidError>;
