use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid beta value {0}: must be finite or -inf")]
    InvalidBeta(f64),

    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("failed to parse {what}: {message}")]
    Parse { what: &'static str, message: String },

    /// Z(-inf) = c_0 is zero, so the ratio is undefined.
    #[error("partition function undefined at beta = -inf: the model has no atom at x = 0")]
    UndefinedPartition,

    #[error("beta ordering violated: {b1} > {b2}")]
    Ordering { b1: f64, b2: f64 },

    #[error("value {value} outside the range ({lo}, {hi})")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("exact log Q = {log_q} exceeds the promised bound q = {q}")]
    InconsistentSpec { log_q: f64, q: f64 },

    #[error("parameter {name} = {value} is invalid: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("degenerate estimate at schedule pair {pair}: {reason}")]
    DegenerateEstimate { pair: usize, reason: &'static str },

    #[error("sample size 100(e^{kappa} - 1)/eps^2 with eps = {epsilon} does not fit in 64 bits")]
    SampleSizeOverflow { kappa: f64, epsilon: f64 },

    #[error("{requested} samples requested {scope}; the limit is {limit}")]
    SampleBudget {
        requested: u64,
        limit: u64,
        scope: &'static str,
    },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },

    #[error("all {0} replicas failed")]
    AllReplicasFailed(usize),
}
