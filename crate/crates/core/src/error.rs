use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed transitions: {0}")]
    MalformedTransitions(String),
    #[error("malformed mdp: {0}")]
    MalformedMdp(String),
    #[error("not ergodic: {0}")]
    NotErgodic(String),
    #[error("degenerate chain: {0}")]
    DegenerateChain(String),
    #[error("unreachable state {0}")]
    UnreachableState(usize),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("oracle size limit: {0} deterministic policies exceeds the cap")]
    OracleSizeLimit(u128),
    #[error("policy iteration stalled after {0} iterations")]
    PolicyIterationStalled(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(f64),
    #[error("malformed linear program: {0}")]
    MalformedLp(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("beta undefined: (1 - gamma) * D = {0} >= 1")]
    BetaUndefined(f64),
    #[error("formula out of domain: {0}")]
    OutOfDomain(String),
    #[error("unsupported norm for joint LP: p = {0}")]
    UnsupportedNorm(f64),
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("simulation aborted: {0}")]
    Simulation(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
