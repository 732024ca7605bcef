use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::rng::DrawRng;

/// A smooth stochastic program `min_x E_P[h(x, xi)]` together with the
/// closed-form facts about `P` that the oracle needs.
///
/// Per-draw evaluations write into caller-owned buffers; solvers call them
/// millions of times per Monte Carlo cell.
pub trait StochasticProgram: Send + Sync + fmt::Debug {
    /// Decision dimension d.
    fn dim(&self) -> usize;
    /// Dimension of a single draw.
    fn draw_dim(&self) -> usize;

    fn loss(&self, x: &[f64], xi: &[f64]) -> f64;
    /// Overwrites `out` (length d) with the x-gradient of the loss.
    fn loss_gradient(&self, x: &[f64], xi: &[f64], out: &mut [f64]);
    /// Overwrites `out` (row-major d x d) with the x-Hessian of the loss.
    fn loss_hessian(&self, x: &[f64], xi: &[f64], out: &mut [f64]);

    /// Fills `out` with consecutive i.i.d. draws from P.
    fn sample_into(&self, rng: &mut DrawRng, out: &mut [f64]);

    /// Z(x) = E_P[h(x, xi)] in closed form.
    fn true_objective(&self, x: &[f64]) -> f64;
    fn true_gradient(&self, x: &[f64]) -> DVector<f64>;
    /// E_P[Hessian of h(x, xi)].
    fn expected_hessian(&self, x: &[f64]) -> DMatrix<f64>;
    /// Cov_P of the loss gradient at `x`.
    fn gradient_covariance(&self, x: &[f64]) -> DMatrix<f64>;
    /// Var_P(h) and Cov_P(h, grad h) at `x`, when available.
    fn loss_moments(&self, x: &[f64]) -> Option<LossMoments>;

    /// Minimizer of Z without constraints.
    fn unconstrained_optimum(&self) -> Vec<f64>;
    /// Starting point for data-driven solvers.
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
    /// Lipschitz modulus of `xi -> h(x, xi)`, if the loss has one.
    fn lipschitz(&self) -> Option<LipschitzModulus> {
        None
    }
    /// A point where `h(x, .)` is constant, if any. Worst-case objectives
    /// have a kink there.
    fn flat_point(&self) -> Option<Vec<f64>> {
        None
    }
    fn describe(&self) -> String;
}

/// Second-order facts about the loss at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMoments {
    pub variance: f64,
    pub covariance_with_gradient: Vec<f64>,
}

/// `Lip(h(x, .)) = scale * ||x||`, the form taken by losses that depend on
/// the draw through a linear score such as `x' xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzModulus {
    pub scale: f64,
}

impl LipschitzModulus {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.scale * norm(x)
    }

    /// Gradient away from the origin; zero at the origin.
    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let r = norm(x);
        if r == 0.0 {
            return DVector::zeros(x.len());
        }
        DVector::from_iterator(x.len(), x.iter().map(|v| self.scale * v / r))
    }

    /// Hessian away from the origin: `scale (I - u u') / ||x||`.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let r = norm(x);
        if r == 0.0 {
            return DMatrix::zeros(d, d);
        }
        DMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            self.scale * (delta - x[i] * x[j] / (r * r)) / r
        })
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
