use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no closed form for {0} noise; only none and gaussian have exact moments")]
    NoClosedForm(&'static str),

    #[error("invalid noise: {0}")]
    InvalidNoise(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid structural model: {0}")]
    InvalidSem(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("need at least {needed} environments, got {got}")]
    TooFewEnvironments { needed: usize, got: usize },

    #[error("fishr needs per-sample gradient statistics for every environment")]
    MissingGradientStats,

    #[error("degenerate environment pair: {0}")]
    DegeneratePair(String),

    #[error("{kind} solution set is not derived in closed form for {case} environment pairs")]
    NotDerived {
        kind: &'static str,
        case: &'static str,
    },

    #[error("solution set is empty")]
    EmptySolutionSet,

    #[error("lambda must be finite for gradient training")]
    InfiniteLambda,

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error(
        "environment batch of size {0} is too small; variance-based penalties need at least 2"
    )]
    BatchTooSmall(usize),

    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
