use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("negative epsilon {0}")]
    NegativeEpsilon(f64),

    #[error("gaussian smoothing needs sigma > 0, got {0}")]
    NonPositiveSigma(f64),

    #[error("quadrature needs {needed} nodes, budget is {budget}")]
    QuadratureBudgetExceeded { needed: usize, budget: usize },

    #[error("invalid quadrature config: {0}")]
    InvalidQuadrature(String),

    #[error("merge class at s = {0} has zero probability")]
    DegenerateClass(f64),

    #[error("no weights on this support satisfy the moment constraints for epsilon {0}")]
    InfeasibleSupport(f64),

    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),

    #[error(
        "monte carlo needs at least 1000 samples and 2 bins, got {samples} samples / {bins} bins"
    )]
    InvalidSampleCount { samples: usize, bins: usize },

    #[error("bin schedule must be non-empty and strictly increasing")]
    BadSchedule,

    #[error("bad epsilon grid: {0}")]
    BadGrid(String),

    #[error("invalid weak sequence: {0}")]
    InvalidSequence(String),

    #[error("unknown battery '{0}'")]
    UnknownBattery(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

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

pub type Result<T> = std::result::Result<T, Error>;
