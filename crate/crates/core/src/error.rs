use thiserror::Error;

use crate::solvers::SolveError;

/// Errors raised outside of a single solver run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),
    #[error("unknown divergence id `{0}`")]
    UnknownDivergence(String),
    #[error("invalid problem definition: {0}")]
    InvalidProblem(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point is outside the feasible region: {0}")]
    Infeasible(String),
    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),
    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),
    #[error("oracle certificate does not provide {0}")]
    MissingOracle(String),
    #[error("degenerate bias: K'HK = {0:.3e} (non-degeneracy check failed)")]
    DegenerateBias(f64),
    #[error("invalid divergence: {0}")]
    InvalidDivergence(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("cell ({procedure}, n={n}): {failures} of {replications} replications failed, over the 1% budget")]
    FailureBudget {
        procedure: String,
        n: usize,
        failures: usize,
        replications: usize,
    },
    #[error("empirical sample: {0}")]
    Sample(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
