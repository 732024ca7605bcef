//! Stochastic programs, their samplers and oracle ground truth.

mod catalog;
mod certificate;
mod constraints;
mod dataset;
mod definition;
mod families;
mod parametric;
mod program;
pub mod special;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use catalog::{catalog_ids, problem_by_id};
pub use certificate::{BiasVector, OracleCertificate, DEGENERACY_THRESHOLD};
pub use constraints::{
    null_space_basis, Constraint, ConstraintFunction, ConstraintKind, ConstraintSet,
    ACTIVITY_THRESHOLD, BINDING_TOLERANCE, KKT_TOLERANCE,
};
pub use dataset::{Dataset, Provenance};
pub use definition::{DistributionDefinition, LossFamily, ProblemDefinition};
pub use families::{GaussianNll, Location, LogisticUniform, SquaredLoss};
pub use parametric::{GaussianLocationModel, GaussianPrior, ParametricModel, Posterior};
pub use program::{LipschitzModulus, LossMoments, StochasticProgram};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{derive_seed, stream};

/// Slack allowed when checking feasibility of a candidate point.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibleRegion {
    Unconstrained,
    Constrained,
}

/// A catalog or user-defined problem with its certified oracle.
#[derive(Clone)]
pub struct ProblemSpec {
    id: String,
    program: Arc<dyn StochasticProgram>,
    constraints: Option<ConstraintSet>,
    parametric: Option<Arc<dyn ParametricModel>>,
    certificate: OracleCertificate,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("id", &self.id)
            .field("program", &self.program)
            .field("constraints", &self.constraints)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Unconstrained problem; `x*` comes from the program.
    pub fn new(id: impl Into<String>, program: Arc<dyn StochasticProgram>) -> Result<Self> {
        Self::build(id.into(), program, None, None)
    }

    /// Problem whose optimum `x*` and multipliers are certified by `constraints`.
    pub fn constrained(
        id: impl Into<String>,
        program: Arc<dyn StochasticProgram>,
        constraints: ConstraintSet,
        optimum: Vec<f64>,
    ) -> Result<Self> {
        Self::build(id.into(), program, Some((constraints, optimum)), None)
    }

    /// Attaches a parametric model whose `psi(., theta*)` is the true objective.
    pub fn with_parametric(self, model: Arc<dyn ParametricModel>) -> Result<Self> {
        let x = &self.certificate.optimum;
        let g = model.psi_gradient(x, &model.true_parameter());
        if g.norm() > KKT_TOLERANCE {
            return Err(Error::InvalidProblem(format!(
                "grad_x psi(x*, theta*) = {:.3e}",
                g.norm()
            )));
        }
        Ok(ProblemSpec {
            parametric: Some(model),
            ..self
        })
    }

    fn build(
        id: String,
        program: Arc<dyn StochasticProgram>,
        constrained: Option<(ConstraintSet, Vec<f64>)>,
        parametric: Option<Arc<dyn ParametricModel>>,
    ) -> Result<Self> {
        let d = program.dim();
        let (constraints, optimum) = match constrained {
            Some((set, x)) => (Some(set), x),
            None => (None, program.unconstrained_optimum()),
        };
        if optimum.len() != d {
            return Err(Error::InvalidProblem("optimum has the wrong dimension".into()));
        }
        let grad = program.true_gradient(&optimum);
        let objective_hessian = program.expected_hessian(&optimum);
        let (stationarity_residual, hessian, influence_map) = match &constraints {
            None => {
                let r = grad.norm();
                if r > KKT_TOLERANCE {
                    return Err(Error::InvalidProblem(format!("|grad Z(x*)| = {r:.3e}")));
                }
                let m = linalg::inverse(&objective_hessian).ok();
                (r, objective_hessian.clone(), m)
            }
            Some(set) => {
                let r = set.certify(&optimum, &grad)?;
                let h = set.lagrangian_hessian(&objective_hessian)?;
                let z = null_space_basis(&set.jacobian(&optimum))?;
                let reduced = z.transpose() * &h * &z;
                let m = linalg::inverse(&reduced).ok().map(|inv| &z * inv * z.transpose());
                (r, h, m)
            }
        };
        if !linalg::is_symmetric(&hessian, 1e-12) {
            return Err(Error::InvalidProblem("Hessian at x* is not symmetric".into()));
        }
        let lam_min = linalg::min_eigenvalue(&hessian);
        if lam_min < -linalg::PSD_TOLERANCE {
            return Err(Error::NotPsd(format!("Hessian at x* has eigenvalue {lam_min:.3e}")));
        }
        let gradient_covariance = program.gradient_covariance(&optimum);
        let influence_covariance = influence_map.as_ref().map(|m| {
            let mut s = m * &gradient_covariance * m.transpose();
            linalg::symmetrize(&mut s);
            s
        });
        let certificate = OracleCertificate {
            optimal_value: program.true_objective(&optimum),
            loss_moments: program.loss_moments(&optimum),
            lipschitz: program.lipschitz(),
            optimum,
            objective_hessian,
            hessian,
            influence_map,
            gradient_covariance,
            influence_covariance,
            stationarity_residual,
        };
        let spec = ProblemSpec {
            id,
            program,
            constraints,
            parametric: None,
            certificate,
        };
        match parametric {
            Some(p) => spec.with_parametric(p),
            None => Ok(spec),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.program.dim()
    }

    pub fn program(&self) -> &dyn StochasticProgram {
        self.program.as_ref()
    }

    pub fn region(&self) -> FeasibleRegion {
        match &self.constraints {
            Some(c) if !c.is_empty() => FeasibleRegion::Constrained,
            _ => FeasibleRegion::Unconstrained,
        }
    }

    pub fn constraints(&self) -> Option<&ConstraintSet> {
        self.constraints.as_ref()
    }

    pub fn parametric(&self) -> Option<&dyn ParametricModel> {
        self.parametric.as_deref()
    }

    pub fn certificate(&self) -> &OracleCertificate {
        &self.certificate
    }

    pub fn describe(&self) -> String {
        self.program.describe()
    }
}

/// `n` i.i.d. draws; a pure function of `(problem, n, seed)`.
///
/// # Panics
/// If `n == 0`.
pub fn sample_dataset(problem: &ProblemSpec, n: usize, seed: u64) -> Dataset {
    assert!(n >= 1, "sample size must be positive");
    let p = problem.program();
    let mut draws = vec![0.0; n * p.draw_dim()];
    p.sample_into(&mut stream(seed), &mut draws);
    Dataset::new(
        draws,
        p.draw_dim(),
        Provenance {
            problem: problem.id().to_string(),
            seed,
        },
    )
}

/// Optimality gap `Z(x) - Z(x*)`.
pub fn true_gap(problem: &ProblemSpec, x: &[f64]) -> Result<f64> {
    if x.len() != problem.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Infeasible(format!("point {x:?}")));
    }
    if let Some(c) = problem.constraints() {
        if !c.is_feasible(x, FEASIBILITY_TOLERANCE) {
            return Err(Error::Infeasible(format!("point {x:?} violates a constraint")));
        }
    }
    Ok(problem.program().true_objective(x) - problem.certificate().optimal_value)
}

/// `IF(xi) = -M grad h(x*, xi)`; `M = H^-1` without constraints.
pub fn eo_influence(problem: &ProblemSpec, xi: &[f64]) -> Result<DVector<f64>> {
    let cert = problem.certificate();
    let m = cert.influence_map()?;
    let mut g = vec![0.0; problem.dim()];
    problem.program().loss_gradient(&cert.optimum, xi, &mut g);
    Ok(-(m * linalg::vector(&g)))
}

/// Hessian governing the gap: `grad^2 Z(x*) + sum_B alpha_j grad^2 g_j(x*)`.
pub fn lagrangian_hessian(problem: &ProblemSpec) -> Result<DMatrix<f64>> {
    let h = &problem.certificate().objective_hessian;
    match problem.constraints() {
        None => Ok(h.clone()),
        Some(set) => set.lagrangian_hessian(h),
    }
}

/// Worst relative errors of analytic derivatives against finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub points: usize,
    pub gradient_error: f64,
    pub hessian_error: f64,
}

pub const GRADIENT_FD_TOLERANCE: f64 = 1e-6;
pub const HESSIAN_FD_TOLERANCE: f64 = 1e-5;

impl DerivativeCheck {
    pub fn passes(&self) -> bool {
        self.gradient_error <= GRADIENT_FD_TOLERANCE && self.hessian_error <= HESSIAN_FD_TOLERANCE
    }
}

/// Central-difference check at `points` random `(x, xi)` pairs near `x*`.
pub fn check_derivatives(problem: &ProblemSpec, points: usize, seed: u64) -> DerivativeCheck {
    let p = problem.program();
    let d = p.dim();
    let xstar = &problem.certificate().optimum;
    let mut rng = stream(derive_seed(seed, &[0xD1FF]));
    let mut xi = vec![0.0; p.draw_dim()];
    let (mut g, mut gp, mut gm) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut hess = vec![0.0; d * d];
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..points {
        let x: Vec<f64> = xstar
            .iter()
            .map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        p.sample_into(&mut rng, &mut xi);
        p.loss_gradient(&x, &xi, &mut g);
        p.loss_hessian(&x, &xi, &mut hess);
        let mut fd_g = vec![0.0; d];
        let mut fd_h = vec![0.0; d * d];
        for i in 0..d {
            let step = 1e-5 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            fd_g[i] = (p.loss(&xp, &xi) - p.loss(&xm, &xi)) / (2.0 * step);
            p.loss_gradient(&xp, &xi, &mut gp);
            p.loss_gradient(&xm, &xi, &mut gm);
            for j in 0..d {
                fd_h[j * d + i] = (gp[j] - gm[j]) / (2.0 * step);
            }
        }
        worst_g = worst_g.max(relative_error(&g, &fd_g));
        worst_h = worst_h.max(relative_error(&hess, &fd_h));
    }
    DerivativeCheck {
        points,
        gradient_error: worst_g,
        hessian_error: worst_h,
    }
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().map(|a| a.abs()).fold(1.0, f64::max);
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_mean_gap_and_influence() {
        let p = problem_by_id("gaussian-mean").unwrap();
        assert_eq!(true_gap(&p, &[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(true_gap(&p, &[1.0, 0.0]).unwrap(), 0.5, epsilon = 1e-15);
        let inf = eo_influence(&p, &[0.3, -1.2]).unwrap();
        assert_relative_eq!(inf, linalg::vector(&[0.3, -1.2]), epsilon = 1e-15);
        assert_eq!(eo_influence(&p, &[0.0, 0.0]).unwrap().norm(), 0.0);
    }

    #[test]
    fn exp_quadratic_influence() {
        let p = problem_by_id("exp-quadratic").unwrap();
        assert_relative_eq!(eo_influence(&p, &[2.5]).unwrap()[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = problem_by_id("gaussian-mean").unwrap();
        let a = sample_dataset(&p, 3, 7);
        let b = sample_dataset(&p, 3, 7);
        assert_eq!(a.as_flat(), b.as_flat());
        assert!(a.draw(0) != a.draw(1) && a.draw(1) != a.draw(2));
        assert_eq!(sample_dataset(&p, 1, 0).len(), 1);
    }

    #[test]
    fn exp_sample_mean() {
        let p = problem_by_id("exp-quadratic").unwrap();
        let d = sample_dataset(&p, 100_000, 1);
        let m = d.empirical_mean(|x| x[0]);
        // Exp(1) has unit mean and unit variance.
        assert!((m - 1.0).abs() < 4.0 / (100_000f64).sqrt());
    }

    #[test]
    fn lagrangian_hessians() {
        let p = problem_by_id("gaussian-mean").unwrap();
        assert_eq!(lagrangian_hessian(&p).unwrap(), DMatrix::identity(2, 2));
        let s = problem_by_id("sphere-constrained-gaussian").unwrap();
        let alpha = s.constraints().unwrap().multipliers().unwrap()[0];
        assert_relative_eq!(alpha, 0.5, epsilon = 1e-15);
        assert_relative_eq!(
            lagrangian_hessian(&s).unwrap(),
            DMatrix::identity(2, 2) * (1.0 + 2.0 * alpha),
            epsilon = 1e-15
        );
    }

    #[test]
    fn infeasible_point_rejected() {
        let s = problem_by_id("sphere-constrained-gaussian").unwrap();
        assert!(matches!(true_gap(&s, &[0.5, 0.0]), Err(Error::Infeasible(_))));
        assert!(true_gap(&s, &[0.0, 1.0]).unwrap() > 0.0);
    }

    #[test]
    fn every_catalog_problem_passes_derivative_checks() {
        for id in catalog_ids() {
            let p = problem_by_id(id).unwrap();
            let check = check_derivatives(&p, 20, 11);
            assert!(check.passes(), "{id}: {check:?}");
        }
    }

    #[test]
    fn influence_has_mean_zero_and_certified_covariance() {
        for id in catalog_ids() {
            let p = problem_by_id(id).unwrap();
            let n = 100_000;
            let data = sample_dataset(&p, n, 5);
            let d = p.dim();
            let ifs: Vec<DVector<f64>> = data.iter().map(|xi| eo_influence(&p, xi).unwrap()).collect();
            let mean = ifs.iter().fold(DVector::zeros(d), |a, v| a + v) / n as f64;
            let sigma = p.certificate().influence_covariance().unwrap();
            for i in 0..d {
                let se = (sigma[(i, i)] / n as f64).sqrt();
                assert!(mean[i].abs() <= 4.0 * se + 1e-14, "{id}: mean {mean}");
            }
            for i in 0..d {
                for j in 0..d {
                    let prods: Vec<f64> = ifs.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).collect();
                    let m = prods.iter().sum::<f64>() / n as f64;
                    let v = prods.iter().map(|q| (q - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                    let se = (v / n as f64).sqrt();
                    assert!((m - sigma[(i, j)]).abs() <= 4.0 * se + 1e-12, "{id} ({i},{j}): {m} vs {}", sigma[(i, j)]);
                }
            }
        }
    }
}
