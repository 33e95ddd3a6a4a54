use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("distribution must have at least one element")]
    EmptyDistribution,
    #[error("probability at element {id} is invalid: {value}")]
    InvalidProbability { id: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("element id {id} outside 1..={k}")]
    ElementOutOfRange { id: usize, k: usize },
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("partition groups are not disjoint (element {0} repeated)")]
    OverlappingPartition(usize),
    #[error("partition contains an empty group")]
    EmptyGroup,
    #[error("empty support: base set has zero mass")]
    EmptySupport,
    #[error("domains differ: {0} vs {1}")]
    DomainMismatch(usize, usize),
    #[error("degenerate statistic: nonzero numerator over zero denominator")]
    DegenerateStatistic,
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("invalid generator spec: {0}")]
    InvalidGenerator(String),
    #[error("generated pair is not {eps}-far (l1 distance {l1})")]
    NotFar { eps: f64, l1: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
