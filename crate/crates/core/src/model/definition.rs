//! Declarative JSON problem definitions.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::constraints::{Constraint, ConstraintFunction, ConstraintSet};
use super::families::{GaussianNll, Location, LogisticUniform, SquaredLoss};
use super::parametric::{GaussianLocationModel, GaussianPrior};
use super::program::{norm, StochasticProgram};
use super::ProblemSpec;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    /// `|x - xi|^2 / 2`
    Squared,
    /// `ln(1 + exp(-x xi))`, scalar
    Logistic,
    /// Negative log-likelihood of `N(m, e^{2s})`
    GaussianNll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum DistributionDefinition {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Exponential { rate: f64 },
    Uniform { low: f64, high: f64 },
}

/// A problem assembled from a loss family and a sampling law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDefinition {
    pub id: String,
    pub loss: LossFamily,
    pub distribution: DistributionDefinition,
    /// Single equality constraint, squared loss only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintFunction>,
    /// Conjugate prior on the Gaussian mean; enables the parametric procedures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GaussianPrior>,
}

impl ProblemDefinition {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<ProblemSpec> {
        use DistributionDefinition as D;
        let invalid = |m: &str| Error::InvalidProblem(format!("{}: {m}", self.id));
        let program: Arc<dyn StochasticProgram> = match (&self.loss, &self.distribution) {
            (LossFamily::Squared, D::Gaussian { mean, cov }) => Arc::new(SquaredLoss {
                location: Location::gaussian(mean.clone(), linalg::matrix_from_rows(cov)?)?,
            }),
            (LossFamily::Squared, D::Exponential { rate }) => Arc::new(SquaredLoss {
                location: Location::exponential(*rate)?,
            }),
            (LossFamily::Logistic, D::Uniform { low, high }) => {
                Arc::new(LogisticUniform::new(*low, *high)?)
            }
            (LossFamily::GaussianNll, D::Gaussian { mean, cov }) => {
                if mean.len() != 1 || cov.len() != 1 || cov[0].len() != 1 {
                    return Err(invalid("gaussian-nll takes a scalar normal law"));
                }
                Arc::new(GaussianNll::new(mean[0], cov[0][0].sqrt())?)
            }
            _ => return Err(invalid("unsupported loss/distribution pairing")),
        };

        let mut spec = match &self.constraint {
            None => ProblemSpec::new(self.id.clone(), program.clone())?,
            Some(function) => {
                if self.loss != LossFamily::Squared {
                    return Err(invalid("constraints are supported for the squared loss only"));
                }
                let mu = program.unconstrained_optimum();
                let (optimum, alpha) = squared_loss_kkt(function, &mu).map_err(|m| invalid(&m))?;
                let set = ConstraintSet {
                    constraints: vec![Constraint::equality(function.clone())],
                    binding: vec![0],
                    multipliers: Some(vec![alpha]),
                };
                ProblemSpec::constrained(self.id.clone(), program.clone(), set, optimum)?
            }
        };

        if let Some(prior) = &self.prior {
            let D::Gaussian { mean, cov } = &self.distribution else {
                return Err(invalid("a prior needs Gaussian draws"));
            };
            if self.loss != LossFamily::Squared {
                return Err(invalid("a prior is supported for the squared loss only"));
            }
            let noise: DMatrix<f64> = linalg::matrix_from_rows(cov)?;
            let model = GaussianLocationModel::new(mean.clone(), noise, Some(prior.clone()))?;
            spec = spec.with_parametric(Arc::new(model))?;
        }
        Ok(spec)
    }
}

/// Minimizer of `|x - mu|^2 / 2` on `{g = 0}` and its multiplier, with the
/// sign convention `grad Z + alpha grad g = 0`.
fn squared_loss_kkt(
    function: &ConstraintFunction,
    mu: &[f64],
) -> std::result::Result<(Vec<f64>, f64), String> {
    match function {
        ConstraintFunction::Sphere { radius } => {
            let m = norm(mu);
            if !(*radius > 0.0) || m == 0.0 {
                return Err("sphere projection needs radius > 0 and a nonzero mean".into());
            }
            let x = mu.iter().map(|v| radius * v / m).collect();
            Ok((x, 0.5 * (m / radius - 1.0)))
        }
        ConstraintFunction::Linear { normal, offset } => {
            if normal.len() != mu.len() {
                return Err("constraint normal has the wrong dimension".into());
            }
            let a2: f64 = normal.iter().map(|a| a * a).sum();
            if a2 == 0.0 {
                return Err("zero constraint normal".into());
            }
            let alpha = (normal.iter().zip(mu).map(|(a, m)| a * m).sum::<f64>() - offset) / a2;
            let x = mu.iter().zip(normal).map(|(m, a)| m - alpha * a).collect();
            Ok((x, alpha))
        }
    }
}
