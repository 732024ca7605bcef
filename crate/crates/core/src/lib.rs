//! Empirical optimization against its expanded alternatives.
//!
//! The crate builds smooth stochastic programs with certified oracles,
//! solves them by EO, regularization, phi-divergence DRO, Wasserstein DRO,
//! parametric plug-in and Bayesian procedures, and compares the laws of the
//! resulting optimality gaps against the limit theory.

pub mod asymptotics;
pub mod divergence;
pub mod dominance;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod solvers;

pub use asymptotics::{
    gap_distribution, ks_distance, sample_limit_law, trichotomy_case, LambdaRule, LimitLawParams,
    TrichotomyCase,
};
pub use divergence::{DivergenceId, PhiDivergence};
pub use dominance::{icx_dominates, stop_loss, DominancePolicy, DominanceVerdict, EmpiricalSample, Verdict};
pub use harness::{run_experiment, run_experiment_with_jobs, ExperimentConfig, Report};
pub use error::{Error, Result};
pub use model::{
    eo_influence, lagrangian_hessian, problem_by_id, sample_dataset, true_gap, Dataset,
    OracleCertificate, ProblemSpec,
};
pub use solvers::{solve, ProcedureKind, ProcedureSpec, Solution, SolveError};
