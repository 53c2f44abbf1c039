/// Crate-wide error type.
///
/// Variants map one-to-one onto the failure modes the library contracts
/// promise; callers that need to branch can match on them directly.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A structure-aware prompt condition was requested without the instance
    /// metadata it needs (family, formula, or parameters).
    #[error("prompt condition requires instance metadata that was not provided")]
    MissingStructureInfo,

    /// Every completion in a belief sample was invalid.
    #[error("belief sample contains no valid completions")]
    EmptyBelief,

    #[error("need at least {needed} valid samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// Rejection sampling accepted fewer than two consistent proposals.
    #[error("only {accepted} consistent proposals accepted, need at least 2")]
    InsufficientConsistentSamples { accepted: usize },

    /// The oracle did not supply token log-probabilities.
    #[error("token log-probabilities unavailable from this oracle")]
    ProxyUnavailable,

    /// Rank correlation is undefined when an input vector is constant.
    #[error("rank correlation undefined: input ranks are degenerate")]
    DegenerateRanks,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Camouflaged BO initialization could not find a usable candidate set.
    #[error("initialization failed: {0}")]
    InitFailure(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    /// A compiled default drifted from its pinned expected value.
    #[error("constants drift detected in: {}", .0.join(", "))]
    ConstantsDrift(Vec<String>),

    #[error("no usable records found: {0}")]
    NoData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
