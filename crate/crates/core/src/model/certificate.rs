use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::program::{LipschitzModulus, LossMoments};
use crate::divergence::PhiDivergence;
use crate::error::{Error, Result};
use crate::linalg;
use crate::solvers::{ProcedureKind, ProcedureSpec};

/// `K'HK` below this marks the bias as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

/// Ground truth at the optimum of a catalog problem.
#[derive(Debug, Clone)]
pub struct OracleCertificate {
    pub optimum: Vec<f64>,
    pub optimal_value: f64,
    /// Hessian of the true objective at `x*`.
    pub objective_hessian: DMatrix<f64>,
    /// Curvature governing the gap: `objective_hessian` without
    /// constraints, the Lagrangian Hessian with them.
    pub hessian: DMatrix<f64>,
    /// `M` with `IF(xi) = -M grad h(x*, xi)`; `None` when singular.
    pub influence_map: Option<DMatrix<f64>>,
    /// `Cov_P(grad h(x*, xi))`.
    pub gradient_covariance: DMatrix<f64>,
    /// `Cov_P(IF)`.
    pub influence_covariance: Option<DMatrix<f64>>,
    pub loss_moments: Option<LossMoments>,
    pub lipschitz: Option<LipschitzModulus>,
    /// Gradient norm (unconstrained) or KKT residual (constrained) at `x*`.
    pub stationarity_residual: f64,
}

/// First-order bias `K` of a procedure, with its curvature `K'HK`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    pub k: Vec<f64>,
    pub curvature: f64,
    pub degenerate: bool,
}

impl OracleCertificate {
    pub fn influence_map(&self) -> Result<&DMatrix<f64>> {
        self.influence_map
            .as_ref()
            .ok_or_else(|| Error::Singular("Hessian at x* has no inverse on the feasible directions".into()))
    }

    pub fn influence_covariance(&self) -> Result<&DMatrix<f64>> {
        self.influence_covariance
            .as_ref()
            .ok_or_else(|| Error::Singular("influence covariance undefined".into()))
    }

    /// `K` such that `x_hat - x* = <IF, P_n - P> + lambda_eff K + o(.)`,
    /// where `lambda_eff` is `sqrt(lambda)` for divergence DRO and `lambda`
    /// otherwise.
    pub fn bias_vector(&self, procedure: &ProcedureSpec) -> Result<BiasVector> {
        let d = self.optimum.len();
        let x = &self.optimum;
        let direction: DVector<f64> = match &procedure.kind {
            ProcedureKind::Eo | ProcedureKind::ConstrainedEo => DVector::zeros(d),
            ProcedureKind::Regularized { penalty } => penalty.gradient(x),
            ProcedureKind::ParametricPlugin { penalty } | ProcedureKind::Bayesian { penalty, .. } => {
                penalty.as_ref().map_or_else(|| DVector::zeros(d), |p| p.gradient(x))
            }
            ProcedureKind::DroDivergence { divergence } => {
                let (var, cov) = self.moments()?;
                if var <= 0.0 {
                    return Err(Error::MissingOracle("positive loss variance at x*".into()));
                }
                let c = PhiDivergence::from_id(*divergence).conjugate_curvature();
                cov * ((2.0 * c).sqrt() / var.sqrt())
            }
            ProcedureKind::DroLagrangian { divergence } => {
                let (_, cov) = self.moments()?;
                cov * PhiDivergence::from_id(*divergence).conjugate_curvature()
            }
            ProcedureKind::DroWasserstein1 => {
                let lip = self
                    .lipschitz
                    .ok_or_else(|| Error::MissingOracle("Lipschitz modulus".into()))?;
                if linalg::vector(x).norm() == 0.0 {
                    return Err(Error::MissingOracle(
                        "gradient of the Lipschitz modulus at x* = 0".into(),
                    ));
                }
                lip.gradient(x)
            }
        };
        let k = -(self.influence_map()? * direction);
        let curvature = linalg::quad_form(&self.hessian, &k);
        Ok(BiasVector {
            k: k.as_slice().to_vec(),
            curvature,
            degenerate: curvature < DEGENERACY_THRESHOLD,
        })
    }

    fn moments(&self) -> Result<(f64, DVector<f64>)> {
        let m = self
            .loss_moments
            .as_ref()
            .ok_or_else(|| Error::MissingOracle("loss moments at x*".into()))?;
        Ok((m.variance, linalg::vector(&m.covariance_with_gradient)))
    }
}
