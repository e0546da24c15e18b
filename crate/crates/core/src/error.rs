use std::fmt;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("empty training batch")]
    EmptyBatch,

    #[error("segment lengths differ: {0} vs {1}")]
    SegmentLengthMismatch(usize, usize),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("no stored episode has at least {0} steps")]
    NoEpisodeLongEnough(usize),

    #[error("reference batch of {size} states is too small for k = {k}")]
    ReferenceBatchTooSmall { size: usize, k: usize },

    #[error("no candidate pairs to select from")]
    NoCandidates,

    #[error("requested {requested} queries from only {available} candidates")]
    TooFewCandidates { requested: usize, available: usize },

    #[error("feedback budget exhausted after {0} labels")]
    BudgetExhausted(usize),

    #[error("segment is missing its true-return annotation")]
    MissingTrueReturn,

    #[error("degenerate reward (constant after canonicalization)")]
    DegenerateReward,

    #[error("coverage sample needs at least 2 triples, got {0}")]
    CoverageTooSmall(usize),

    #[error("step called on a finished episode")]
    EpisodeFinished,

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("stale reward version: transition has {found}, buffer is at {current}")]
    StaleRewardVersion { found: u64, current: u64 },

    #[error("non-finite SAC loss: {0}")]
    NonFiniteLoss(LossSnapshot),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Line-anchored configuration error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Diagnostic values captured when a SAC update goes non-finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSnapshot {
    pub update: u64,
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub reward_range: (f64, f64),
}

impl fmt::Display for LossSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "update {} critic1={} critic2={} actor={} rewards in [{}, {}]",
            self.update,
            self.critic1,
            self.critic2,
            self.actor,
            self.reward_range.0,
            self.reward_range.1
        )
    }
}
