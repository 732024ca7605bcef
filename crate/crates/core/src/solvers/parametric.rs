use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::newton::{minimize, Objective};
use super::{Diagnostics, Penalty, Solution, SolveError};
use crate::model::{Dataset, GaussianPrior, ParametricModel, Posterior, ProblemSpec};
use crate::quadrature::gauss_hermite;

/// Gauss–Hermite nodes per parameter dimension.
pub const HERMITE_NODES: usize = 32;

/// How the posterior expectation of `psi` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorMethod {
    #[default]
    ClosedForm,
    GaussHermite,
}

/// `sum_k w_k psi(x, theta_k) + lambda R(x)` for a finite set of parameters.
struct WeightedPsi<'a> {
    model: &'a dyn ParametricModel,
    thetas: Vec<(f64, Vec<f64>)>,
    penalty: Option<(&'a Penalty, f64)>,
}

impl WeightedPsi<'_> {
    fn penalty_terms(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = x.len();
        match self.penalty {
            Some((p, lambda)) if lambda != 0.0 => (
                lambda * p.value(x),
                p.gradient(x) * lambda,
                p.hessian(d) * lambda,
            ),
            _ => (0.0, DVector::zeros(d), DMatrix::zeros(d, d)),
        }
    }
}

impl Objective for WeightedPsi<'_> {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64, SolveError> {
        let xs = x.as_slice();
        let f: f64 = self.thetas.iter().map(|(w, t)| w * self.model.psi(xs, t)).sum();
        Ok(f + self.penalty_terms(xs).0)
    }

    fn derivatives(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), SolveError> {
        let xs = x.as_slice();
        let (mut f, mut g, mut h) = self.penalty_terms(xs);
        for (w, t) in &self.thetas {
            f += w * self.model.psi(xs, t);
            g += self.model.psi_gradient(xs, t) * *w;
            h += self.model.psi_hessian(xs, t) * *w;
        }
        Ok((f, g, h))
    }
}

/// Closed-form posterior expectation plus penalty.
struct PosteriorPsi<'a> {
    model: &'a dyn ParametricModel,
    posterior: Posterior,
    penalty: Option<(&'a Penalty, f64)>,
}

impl PosteriorPsi<'_> {
    fn eval(&self, xs: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>), SolveError> {
        let (mut f, mut g, mut h) = self
            .model
            .posterior_expected_psi(xs, &self.posterior)
            .ok_or(SolveError::Missing("a closed-form posterior expectation"))?;
        if let Some((p, lambda)) = self.penalty {
            if lambda != 0.0 {
                f += lambda * p.value(xs);
                g += p.gradient(xs) * lambda;
                h += p.hessian(xs.len()) * lambda;
            }
        }
        Ok((f, g, h))
    }
}

impl Objective for PosteriorPsi<'_> {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64, SolveError> {
        Ok(self.eval(x.as_slice())?.0)
    }

    fn derivatives(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), SolveError> {
        self.eval(x.as_slice())
    }
}

fn finish(obj: &mut dyn Objective, x0: Vec<f64>) -> Result<Solution, SolveError> {
    let out = minimize(obj, DVector::from_vec(x0))?;
    Ok(Solution {
        x: out.x.as_slice().to_vec(),
        objective: out.value,
        diagnostics: Diagnostics {
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
            converged: out.converged,
        },
        dual: None,
        multipliers: None,
        binding_mismatch: false,
    })
}

fn model_of(problem: &ProblemSpec) -> Result<&dyn ParametricModel, SolveError> {
    problem
        .parametric()
        .ok_or(SolveError::Missing("a parametric model"))
}

/// Plug-in: `min_x psi(x, theta_hat) + lambda R(x)` with `theta_hat` the MLE.
pub fn solve_parametric(
    problem: &ProblemSpec,
    data: &Dataset,
    penalty: Option<&Penalty>,
    lambda: f64,
) -> Result<Solution, SolveError> {
    if !(lambda >= 0.0) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    let model = model_of(problem)?;
    let theta = model.mle(data).map_err(|e| SolveError::Mle(e.to_string()))?;
    let mut obj = WeightedPsi {
        model,
        thetas: vec![(1.0, theta)],
        penalty: penalty.map(|p| (p, lambda)),
    };
    finish(&mut obj, problem.program().initial_point())
}

/// Tensor-product Gauss–Hermite nodes of `N(mean, cov)`.
fn hermite_nodes(posterior: &Posterior) -> Result<Vec<(f64, Vec<f64>)>, SolveError> {
    let m = posterior.mean.len();
    let chol = posterior
        .covariance
        .clone()
        .cholesky()
        .ok_or(SolveError::Model("posterior covariance is not positive definite".into()))?;
    let l = chol.l();
    let rule = gauss_hermite(HERMITE_NODES);
    let total = HERMITE_NODES.pow(m as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut z = DVector::zeros(m);
    for flat in 0..total {
        let mut rest = flat;
        let mut w = 1.0;
        for k in 0..m {
            let idx = rest % HERMITE_NODES;
            rest /= HERMITE_NODES;
            z[k] = rule.nodes[idx];
            w *= rule.weights[idx];
        }
        let theta = &posterior.mean + &l * &z;
        nodes.push((w, theta.as_slice().to_vec()));
    }
    Ok(nodes)
}

/// `min_x E_{Theta | data}[psi(x, Theta)] + lambda R(x)` under a conjugate
/// Gaussian prior.
pub fn solve_bayesian(
    problem: &ProblemSpec,
    data: &Dataset,
    prior: &GaussianPrior,
    penalty: Option<&Penalty>,
    lambda: f64,
    method: PosteriorMethod,
) -> Result<Solution, SolveError> {
    if !(lambda >= 0.0) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    let model = model_of(problem)?;
    let posterior = model
        .posterior(data, prior)
        .map_err(|e| SolveError::Model(e.to_string()))?;
    let x0 = problem.program().initial_point();
    match method {
        PosteriorMethod::ClosedForm => {
            let mut obj = PosteriorPsi {
                model,
                posterior,
                penalty: penalty.map(|p| (p, lambda)),
            };
            finish(&mut obj, x0)
        }
        PosteriorMethod::GaussHermite => {
            let mut obj = WeightedPsi {
                model,
                thetas: hermite_nodes(&posterior)?,
                penalty: penalty.map(|p| (p, lambda)),
            };
            finish(&mut obj, x0)
        }
    }
}
