use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("event index {index} out of range for catalog of {len} events")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported spatial dimension {0} (supported: 1..=8)")]
    UnsupportedDimension(usize),
    #[error("invalid event {index}: {reason}")]
    InvalidEvent { index: usize, reason: String },
    #[error("events are not sorted by time (event {0} precedes its predecessor)")]
    UnsortedTimes(usize),
    #[error("at least {required} events are required, found {found}")]
    TooFewEvents { required: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),
    #[error("gradient undefined: log-likelihood is -inf (some event has zero intensity)")]
    GradientUndefined,
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("rejection sampler exceeded {0} iterations")]
    RejectionCapExceeded(usize),
    #[error("invalid distance matrix: {0}")]
    InvalidDistances(String),
    #[error("coincident latent points {0} and {1}: BMDS gradient is singular")]
    CoincidentPoints(usize, usize),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("series too short for ESS: {0} < 10")]
    SeriesTooShort(usize),
    #[error("ESS undefined for a constant series")]
    ConstantSeries,
    #[error("supercritical branching: expected children {0} >= 1")]
    Supercritical(f64),
    #[error("chain aborted at iteration {iteration}: {source}")]
    ChainAborted {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
