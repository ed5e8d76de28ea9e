use thiserror::Error;

/// Errors produced while building instances, solving, learning or exporting.
#[derive(Debug, Error)]
pub enum ImopError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("feasible region is empty")]
    InfeasibleRegion,
    #[error("feasible region is unbounded")]
    UnboundedRegion,
    #[error("objective matrix {index} is not symmetric positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { index: usize, min_eigenvalue: f64 },
    #[error("claimed strong convexity does not hold (min eigenvalue {0:e})")]
    NotStronglyConvex(f64),
    #[error("{count} inequality constraints exceed the enumeration budget of {limit}")]
    TooManyConstraints { count: usize, limit: usize },
    #[error("parameter outside the hypothesis set at coordinate {index}: {value} not in [{lower}, {upper}]")]
    OutOfHypothesisSet { index: usize, value: f64, lower: f64, upper: f64 },
    #[error("hypothesis set corner {0:?} makes the feasible region empty")]
    InfeasibleCorner(Vec<f64>),
    #[error("weight grid of dimension {0} is unsupported in grid mode")]
    UnsupportedDimension(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no KKT point found: {0}")]
    NoKktPoint(String),
    #[error("every candidate KKT system was singular")]
    SingularKktSystem,
    #[error("no feasible active set for the update")]
    NoFeasibleActiveSet,
    #[error("unsupported parameter block for export: {0}")]
    UnsupportedBlock(String),
    #[error("bin expected counts are insufficient for a chi-square statistic")]
    InsufficientExpectedCounts,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<ImopError>,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImopError>;
