use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("impossible action: output cell {0} has zero probability under the current belief")]
    ImpossibleAction(usize),

    #[error("impossible history: {0}")]
    ImpossibleHistory(String),

    #[error("impossible observation at t={0}: every hidden state has zero likelihood")]
    ImpossibleObservation(usize),

    #[error("instance too large: {paths:.3e} joint paths exceed the enumeration limit {limit:.0e}")]
    TooLarge { paths: f64, limit: f64 },

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::ImpossibleAction(_) => "impossible_action",
            Error::ImpossibleHistory(_) => "impossible_history",
            Error::ImpossibleObservation(_) => "impossible_observation",
            Error::TooLarge { .. } => "too_large",
            Error::SupportMismatch(_) => "support_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
