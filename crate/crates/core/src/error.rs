use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot parse {0:?} as a rational (expected \"p/q\" or a decimal with at most 12 fractional digits)")]
    ParseRational(String),

    #[error("vectors have different lengths ({left} vs {right})")]
    UnequalLength { left: usize, right: usize },

    #[error("vectors have different totals ({left} vs {right}); majorization is undefined")]
    UnequalSums { left: String, right: String },

    #[error("load vector must have at least one entry")]
    EmptyVector,

    #[error("load vector entry {index} is negative")]
    NegativeEntry { index: usize },

    #[error("arrival {arrival} has an empty neighborhood")]
    EmptyNeighborhood { arrival: usize },

    #[error("arrival {arrival} has a nonpositive quantity")]
    NonpositiveQuantity { arrival: usize },

    #[error("offline node {node} is outside 1..={n}")]
    IndexOutOfRange { node: usize, n: usize },

    #[error("a request sequence needs at least one arrival")]
    EmptySequence,

    #[error("a request sequence needs at least one offline node")]
    NoOfflineNodes,

    #[error("transformation would leave arrival {arrival} with no neighbors")]
    DegenerateOutput { arrival: usize },

    #[error("instance has {n} offline nodes; subset enumeration is limited to {limit} (raise AQUAFILL_MAX_N to override)")]
    InstanceTooLarge { n: usize, limit: usize },

    #[error("policy {policy} produced an infeasible allocation for arrival {arrival}")]
    PolicyInfeasibleOutput { policy: String, arrival: usize },

    #[error("policy {policy} has infinite support; exact expectation is unavailable")]
    ExactUnavailable { policy: String },

    #[error("exact expectation exceeded the branch limit of {limit}")]
    BranchLimitExceeded { limit: usize },

    #[error("policy {policy} supports only n = 2 (got n = {n})")]
    UnsupportedDimension { policy: String, n: usize },

    #[error("request sequence is not nested")]
    NotNested,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("samples are not concave and nondecreasing (slope check fails at point {index})")]
    NotConcaveNondecreasing { index: usize },

    #[error("objective {0} is not positively homogeneous; competitive ratio search needs scale invariance")]
    NotHomogeneous(String),

    #[error("unknown objective {0:?}")]
    UnknownObjective(String),

    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

impl Error {
    /// Errors raised by a resource guard rather than by bad input.
    pub fn is_guard(&self) -> bool {
        matches!(
            self,
            Error::InstanceTooLarge { .. }
                | Error::BranchLimitExceeded { .. }
                | Error::PolicyInfeasibleOutput { .. }
        )
    }
}
