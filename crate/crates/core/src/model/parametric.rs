use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Conjugate Gaussian prior on the parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianPrior {
    /// `N(mean, tau^2 I)`
    pub fn isotropic(mean: Vec<f64>, tau: f64) -> Self {
        let m = mean.len();
        let cov = DMatrix::identity(m, m) * (tau * tau);
        GaussianPrior {
            mean,
            covariance: linalg::matrix_to_rows(&cov),
        }
    }
}

/// Posterior mean and covariance of the parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// `Z(x) = psi(x, theta*)` with `theta` estimated from data.
pub trait ParametricModel: Send + Sync + fmt::Debug {
    /// Parameter dimension m.
    fn param_dim(&self) -> usize;
    fn true_parameter(&self) -> Vec<f64>;

    fn psi(&self, x: &[f64], theta: &[f64]) -> f64;
    fn psi_gradient(&self, x: &[f64], theta: &[f64]) -> DVector<f64>;
    fn psi_hessian(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64>;
    /// Mixed derivative `d^2 psi / dx dtheta` (d x m).
    fn psi_cross(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64>;

    fn mle(&self, data: &Dataset) -> Result<Vec<f64>>;
    /// Influence function of the MLE at a single draw.
    fn parameter_influence(&self, xi: &[f64]) -> DVector<f64>;

    fn prior(&self) -> Option<&GaussianPrior>;
    /// Conjugate update of `prior` on `data`.
    fn posterior(&self, data: &Dataset, prior: &GaussianPrior) -> Result<Posterior>;

    /// `(value, gradient, hessian)` of `E[psi(x, Theta)]` for
    /// `Theta ~ N(mean, cov)`, when known in closed form.
    fn posterior_expected_psi(
        &self,
        _x: &[f64],
        _posterior: &Posterior,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        None
    }
}

/// `xi ~ N(theta, Sigma0)`, `psi(x, theta) = |x - theta|^2 / 2 + tr(Sigma0) / 2`.
#[derive(Debug, Clone)]
pub struct GaussianLocationModel {
    theta: Vec<f64>,
    noise: DMatrix<f64>,
    noise_inv: DMatrix<f64>,
    prior: Option<GaussianPrior>,
}

impl GaussianLocationModel {
    pub fn new(theta: Vec<f64>, noise: DMatrix<f64>, prior: Option<GaussianPrior>) -> Result<Self> {
        let noise_inv = linalg::inverse(&noise)?;
        if let Some(p) = &prior {
            let cov = linalg::matrix_from_rows(&p.covariance)?;
            if p.mean.len() != theta.len() || cov.nrows() != theta.len() {
                return Err(Error::InvalidProblem("prior dimension mismatch".into()));
            }
            if cov.clone().cholesky().is_none() {
                return Err(Error::InvalidProblem(
                    "prior covariance is not positive definite".into(),
                ));
            }
        }
        Ok(GaussianLocationModel {
            theta,
            noise,
            noise_inv,
            prior,
        })
    }
}

impl ParametricModel for GaussianLocationModel {
    fn param_dim(&self) -> usize {
        self.theta.len()
    }

    fn true_parameter(&self) -> Vec<f64> {
        self.theta.clone()
    }

    fn psi(&self, x: &[f64], theta: &[f64]) -> f64 {
        let d = linalg::vector(x) - linalg::vector(theta);
        0.5 * d.norm_squared() + 0.5 * self.noise.trace()
    }

    fn psi_gradient(&self, x: &[f64], theta: &[f64]) -> DVector<f64> {
        linalg::vector(x) - linalg::vector(theta)
    }

    fn psi_hessian(&self, x: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }

    fn psi_cross(&self, x: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        -DMatrix::identity(x.len(), x.len())
    }

    fn mle(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.draw_dim() != self.theta.len() {
            return Err(Error::InvalidArgument("draw dimension mismatch".into()));
        }
        Ok(data.mean_draw())
    }

    fn parameter_influence(&self, xi: &[f64]) -> DVector<f64> {
        linalg::vector(xi) - linalg::vector(&self.theta)
    }

    fn prior(&self) -> Option<&GaussianPrior> {
        self.prior.as_ref()
    }

    fn posterior(&self, data: &Dataset, prior: &GaussianPrior) -> Result<Posterior> {
        let n = data.len() as f64;
        let prior_cov = linalg::matrix_from_rows(&prior.covariance)?;
        let prior_prec = linalg::inverse(&prior_cov)?;
        let mut prec = &prior_prec + &self.noise_inv * n;
        linalg::symmetrize(&mut prec);
        let mut covariance = linalg::inverse(&prec)?;
        linalg::symmetrize(&mut covariance);
        let xbar = linalg::vector(&self.mle(data)?);
        let mean = &covariance * (prior_prec * linalg::vector(&prior.mean) + &self.noise_inv * xbar * n);
        if covariance.clone().cholesky().is_none() {
            return Err(Error::Singular("posterior covariance".into()));
        }
        Ok(Posterior { mean, covariance })
    }

    fn posterior_expected_psi(
        &self,
        x: &[f64],
        posterior: &Posterior,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let delta = linalg::vector(x) - &posterior.mean;
        let value = 0.5 * delta.norm_squared()
            + 0.5 * posterior.covariance.trace()
            + 0.5 * self.noise.trace();
        let d = x.len();
        Some((value, delta, DMatrix::identity(d, d)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn posterior_shrinks_toward_prior() {
        let prior = GaussianPrior::isotropic(vec![0.0, 0.0], 1.0);
        let model =
            GaussianLocationModel::new(vec![1.0, 0.0], DMatrix::identity(2, 2), Some(prior.clone()))
                .unwrap();
        let data = Dataset::new(
            vec![1.0, 0.0, 3.0, 2.0],
            2,
            super::super::dataset::Provenance {
                problem: "t".into(),
                seed: 0,
            },
        );
        let post = model.posterior(&data, &prior).unwrap();
        // Precision 1 + n = 3; mean = n xbar / 3.
        assert_relative_eq!(post.mean[0], 2.0 * 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(post.mean[1], 2.0 * 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(post.covariance[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn psi_is_stationary_at_truth() {
        let model = GaussianLocationModel::new(vec![1.0, 0.0], DMatrix::identity(2, 2), None).unwrap();
        let t = model.true_parameter();
        assert!(model.psi_gradient(&t, &t).norm() < 1e-15);
    }
}
