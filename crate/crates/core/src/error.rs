use thiserror::Error;

/// Errors raised by model construction, the solvers and the analyzers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty site set")]
    EmptySiteSet,
    #[error("site index {0} out of range")]
    SiteOutOfRange(usize),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("base sets differ: {0} vs {1}")]
    BaseMismatch(String, String),
    #[error("{0} is not a subset of {1}")]
    NotSubset(String, String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("overlapping supports: {0} and {1}")]
    OverlappingSupports(String, String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("population sizes not stationary under forward migration")]
    NotStationary,
    #[error("migration matrix is not primitive: {0}")]
    NotPrimitive(String),
    #[error("recombination does not separate all sites ({0} are never split); merge them into a single site")]
    SitesNeverSeparated(String),
    #[error("quasi-limit undefined: the process is absorbed after one step with probability one")]
    QuasiLimitUndefined,
    #[error("divergent expectation at state {0}")]
    DivergentExpectation(String),
    #[error("conditioning event has probability zero at t = {0}")]
    ZeroProbabilityCondition(u64),
    #[error("step size too large: weight {value:e} at t = {time}")]
    StepSizeTooLarge { time: f64, value: f64 },
    #[error("two-site formula requires n = 2, got n = {0}")]
    NotTwoSites(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
