use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// The offered load meets or exceeds the min-cut capacity, so no policy
    /// can keep the queues bounded.
    #[error("not stabilizable: arrival rate {arrival_rate} >= min-cut capacity {min_cut_capacity}")]
    NotStabilizable {
        arrival_rate: f64,
        min_cut_capacity: f64,
    },

    /// `(beta, gamma)` lies outside the open region `1 < gamma < beta < m^(1/(2+delta_G))`.
    #[error(
        "infeasible parameters: (beta, gamma) = ({beta}, {gamma}) outside 1 < gamma < beta < {beta_max}"
    )]
    InfeasibleParams { beta: f64, gamma: f64, beta_max: f64 },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// Bernoulli routing weights must be a probability vector over the 3 paths.
    #[error("invalid Bernoulli weights: {0}")]
    InvalidWeights(String),

    #[error("no completed jobs")]
    NoCompletedJobs,

    /// Every grid candidate overloads some server (or produced no completions).
    #[error("no feasible Bernoulli candidate on the grid")]
    NoFeasibleCandidate,

    #[error("missing comparison baseline: {0}")]
    MissingBaseline(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI. Distinct codes for the documented
    /// failure classes, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotStabilizable { .. } => 2,
            Error::InfeasibleParams { .. } => 3,
            Error::ConfigInvalid(_) | Error::InvalidWeights(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
