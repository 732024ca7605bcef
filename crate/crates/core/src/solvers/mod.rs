//! Data-driven solutions for EO and the expanded procedures.

mod constrained;
mod dro;
mod eo;
pub mod newton;
mod parametric;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use constrained::solve_constrained_eo;
pub use dro::{
    lagrangian_worst_case, solve_dro_divergence, solve_dro_lagrangian, worst_case_expectation,
    WorstCase, ALPHA_FLOOR,
};
pub use eo::{solve_dro_wasserstein, solve_eo, solve_regularized};
pub use parametric::{solve_bayesian, solve_parametric, PosteriorMethod, HERMITE_NODES};

use crate::divergence::DivergenceId;
use crate::model::{Dataset, ProblemSpec};

/// Failure of a single solve; recorded per replication by the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("Newton did not converge in {iterations} iterations (|grad| = {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("line search failed to decrease the objective (|grad| = {gradient_norm:.3e})")]
    LineSearch { gradient_norm: f64 },
    #[error("objective or derivative is not finite")]
    NonFinite,
    #[error("inner dual hit the ess-sup branch: alpha = {alpha:.3e}")]
    DegenerateDual { alpha: f64 },
    #[error("inner dual did not converge ({iterations} iterations, residual {residual:.3e})")]
    InnerNonConvergence { iterations: usize, residual: f64 },
    #[error("KKT iteration did not converge ({iterations} iterations, residual {residual:.3e})")]
    Kkt { iterations: usize, residual: f64 },
    #[error("invalid lambda {0}")]
    InvalidLambda(f64),
    #[error("procedure needs {0}, which the problem does not provide")]
    Missing(&'static str),
    #[error("maximum-likelihood estimate failed: {0}")]
    Mle(String),
    #[error("{0}")]
    Model(String),
}

/// Smooth penalty `R(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Penalty {
    /// `|x|^2 / 2`
    #[default]
    Ridge,
    /// `|x - center|^2 / 2`
    ShiftedRidge { center: Vec<f64> },
}

impl Penalty {
    fn offset(&self, x: &[f64]) -> DVector<f64> {
        match self {
            Penalty::Ridge => DVector::from_column_slice(x),
            Penalty::ShiftedRidge { center } => {
                DVector::from_iterator(x.len(), x.iter().zip(center).map(|(a, c)| a - c))
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.offset(x).norm_squared()
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.offset(x)
    }

    pub fn hessian(&self, d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }
}

/// What a procedure does with the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ProcedureKind {
    Eo,
    Regularized {
        #[serde(default)]
        penalty: Penalty,
    },
    DroDivergence {
        divergence: DivergenceId,
    },
    DroLagrangian {
        divergence: DivergenceId,
    },
    #[serde(rename = "dro-wasserstein1")]
    DroWasserstein1,
    ParametricPlugin {
        #[serde(default)]
        penalty: Option<Penalty>,
    },
    Bayesian {
        #[serde(default)]
        penalty: Option<Penalty>,
        #[serde(default)]
        posterior: PosteriorMethod,
    },
    ConstrainedEo,
}

/// A procedure with its resolved `lambda`. For divergence DRO `lambda` is
/// the ball radius and the solution moves on the scale `sqrt(lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSpec {
    #[serde(flatten)]
    pub kind: ProcedureKind,
    pub lambda: f64,
}

impl ProcedureSpec {
    pub fn new(kind: ProcedureKind, lambda: f64) -> Self {
        ProcedureSpec { kind, lambda }
    }

    pub fn eo() -> Self {
        Self::new(ProcedureKind::Eo, 0.0)
    }

    pub fn ridge(lambda: f64) -> Self {
        Self::new(
            ProcedureKind::Regularized {
                penalty: Penalty::Ridge,
            },
            lambda,
        )
    }

    pub fn dro(divergence: DivergenceId, lambda: f64) -> Self {
        Self::new(ProcedureKind::DroDivergence { divergence }, lambda)
    }

    /// Scale on which the solution departs from EO.
    pub fn effective_lambda(&self) -> f64 {
        match self.kind {
            ProcedureKind::DroDivergence { .. } => self.lambda.sqrt(),
            _ => self.lambda,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            ProcedureKind::Eo => "eo".into(),
            ProcedureKind::Regularized { penalty } => match penalty {
                Penalty::Ridge => "ridge".into(),
                Penalty::ShiftedRidge { .. } => "shifted-ridge".into(),
            },
            ProcedureKind::DroDivergence { divergence } => format!("dro-{divergence}"),
            ProcedureKind::DroLagrangian { divergence } => format!("ldro-{divergence}"),
            ProcedureKind::DroWasserstein1 => "dro-wasserstein1".into(),
            ProcedureKind::ParametricPlugin { .. } => "parametric-plugin".into(),
            ProcedureKind::Bayesian { .. } => "bayesian".into(),
            ProcedureKind::ConstrainedEo => "constrained-eo".into(),
        }
    }
}

impl fmt::Display for ProcedureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(lambda={})", self.label(), self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Dual variables of the divergence problems at the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// `None` when the losses are all equal and the dual is not attained.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Objective of the solved formulation at `x`.
    pub objective: f64,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<DualSolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Vec<f64>>,
    /// Constrained runs whose active set differs from the certified one.
    #[serde(default)]
    pub binding_mismatch: bool,
}

/// Runs `spec` on `data`.
pub fn solve(problem: &ProblemSpec, data: &Dataset, spec: &ProcedureSpec) -> Result<Solution, SolveError> {
    let lambda = spec.lambda;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    match &spec.kind {
        ProcedureKind::Eo => solve_eo(problem, data),
        ProcedureKind::Regularized { penalty } => solve_regularized(problem, data, penalty, lambda),
        ProcedureKind::DroDivergence { divergence } => {
            solve_dro_divergence(problem, data, &crate::divergence::PhiDivergence::from_id(*divergence), lambda)
        }
        ProcedureKind::DroLagrangian { divergence } => {
            solve_dro_lagrangian(problem, data, &crate::divergence::PhiDivergence::from_id(*divergence), lambda)
        }
        ProcedureKind::DroWasserstein1 => solve_dro_wasserstein(problem, data, lambda),
        ProcedureKind::ParametricPlugin { penalty } => {
            solve_parametric(problem, data, penalty.as_ref(), lambda)
        }
        ProcedureKind::Bayesian { penalty, posterior } => {
            let prior = problem
                .parametric()
                .and_then(|m| m.prior())
                .ok_or(SolveError::Missing("a conjugate prior"))?
                .clone();
            solve_bayesian(problem, data, &prior, penalty.as_ref(), lambda, *posterior)
        }
        ProcedureKind::ConstrainedEo => solve_constrained_eo(problem, data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procedure_json_round_trip() {
        let specs = vec![
            ProcedureSpec::eo(),
            ProcedureSpec::ridge(0.1),
            ProcedureSpec::dro(DivergenceId::Chi2, 0.01),
            ProcedureSpec::new(ProcedureKind::DroWasserstein1, 0.5),
            ProcedureSpec::new(
                ProcedureKind::Bayesian {
                    penalty: Some(Penalty::ShiftedRidge { center: vec![1.0] }),
                    posterior: PosteriorMethod::GaussHermite,
                },
                0.2,
            ),
        ];
        for s in specs {
            let text = serde_json::to_string(&s).unwrap();
            let back: ProcedureSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, s, "{text}");
        }
        let parsed: ProcedureSpec =
            serde_json::from_str(r#"{"kind": "dro-wasserstein1", "lambda": 0.0}"#).unwrap();
        assert_eq!(parsed.kind, ProcedureKind::DroWasserstein1);
    }

    #[test]
    fn effective_lambda_of_divergence_dro_is_the_root() {
        assert_eq!(ProcedureSpec::dro(DivergenceId::Kl, 0.04).effective_lambda(), 0.2);
        assert_eq!(ProcedureSpec::ridge(0.04).effective_lambda(), 0.04);
    }
}
