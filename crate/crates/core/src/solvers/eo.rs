use nalgebra::{DMatrix, DVector};

use super::newton::{minimize, Objective};
use super::{Diagnostics, Penalty, Solution, SolveError};
use crate::model::{Dataset, LipschitzModulus, ProblemSpec, StochasticProgram};

/// `E_{P_n}[h(x, xi)] + lambda R(x) + lambda_w Lip(x)`.
pub(crate) struct Empirical<'a> {
    pub program: &'a dyn StochasticProgram,
    pub data: &'a Dataset,
    pub penalty: Option<(&'a Penalty, f64)>,
    pub lipschitz: Option<(LipschitzModulus, f64)>,
}

impl<'a> Empirical<'a> {
    pub fn plain(program: &'a dyn StochasticProgram, data: &'a Dataset) -> Self {
        Empirical {
            program,
            data,
            penalty: None,
            lipschitz: None,
        }
    }

    pub fn mean_loss(&self, x: &[f64]) -> f64 {
        self.data.iter().map(|xi| self.program.loss(x, xi)).sum::<f64>() / self.data.len() as f64
    }

    /// Empirical mean of loss, gradient and Hessian.
    pub fn mean_derivatives(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = x.len();
        let mut f = 0.0;
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        let mut gi = vec![0.0; d];
        let mut hi = vec![0.0; d * d];
        for xi in self.data.iter() {
            f += self.program.loss(x, xi);
            self.program.loss_gradient(x, xi, &mut gi);
            self.program.loss_hessian(x, xi, &mut hi);
            for (a, b) in g.iter_mut().zip(&gi) {
                *a += b;
            }
            for (a, b) in h.iter_mut().zip(&hi) {
                *a += b;
            }
        }
        let n = self.data.len() as f64;
        (
            f / n,
            DVector::from_iterator(d, g.into_iter().map(|v| v / n)),
            DMatrix::from_row_iterator(d, d, h.into_iter().map(|v| v / n)),
        )
    }

    fn extras_value(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        if let Some((p, lambda)) = self.penalty {
            v += lambda * p.value(x);
        }
        if let Some((lip, lambda)) = self.lipschitz {
            v += lambda * lip.value(x);
        }
        v
    }
}

impl Objective for Empirical<'_> {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64, SolveError> {
        Ok(self.mean_loss(x.as_slice()) + self.extras_value(x.as_slice()))
    }

    fn derivatives(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), SolveError> {
        let xs = x.as_slice();
        let (mut f, mut g, mut h) = self.mean_derivatives(xs);
        if let Some((p, lambda)) = self.penalty {
            f += lambda * p.value(xs);
            g += p.gradient(xs) * lambda;
            h += p.hessian(xs.len()) * lambda;
        }
        if let Some((lip, lambda)) = self.lipschitz {
            f += lambda * lip.value(xs);
            g += lip.gradient(xs) * lambda;
            h += lip.hessian(xs) * lambda;
        }
        Ok((f, g, h))
    }
}

pub(crate) fn run(obj: &mut Empirical<'_>, x0: DVector<f64>) -> Result<Solution, SolveError> {
    let out = minimize(obj, x0)?;
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

/// Sample average approximation by damped Newton.
pub fn solve_eo(problem: &ProblemSpec, data: &Dataset) -> Result<Solution, SolveError> {
    let program = problem.program();
    let x0 = DVector::from_vec(program.initial_point());
    run(&mut Empirical::plain(program, data), x0)
}

/// Minimizes `E_{P_n}[h] + lambda R(x)`; `lambda = 0` is `solve_eo`.
pub fn solve_regularized(
    problem: &ProblemSpec,
    data: &Dataset,
    penalty: &Penalty,
    lambda: f64,
) -> Result<Solution, SolveError> {
    if !(lambda >= 0.0) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    if lambda == 0.0 {
        return solve_eo(problem, data);
    }
    let program = problem.program();
    let x0 = DVector::from_vec(program.initial_point());
    let mut obj = Empirical {
        penalty: Some((penalty, lambda)),
        ..Empirical::plain(program, data)
    };
    run(&mut obj, x0)
}

/// 1-Wasserstein DRO through its Lipschitz-regularized form
/// `E_{P_n}[h] + lambda Lip(h(x, .))`.
pub fn solve_dro_wasserstein(problem: &ProblemSpec, data: &Dataset, lambda: f64) -> Result<Solution, SolveError> {
    if !(lambda >= 0.0) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    if lambda == 0.0 {
        return solve_eo(problem, data);
    }
    let program = problem.program();
    let lip = program
        .lipschitz()
        .ok_or(SolveError::Missing("a Lipschitz modulus"))?;
    let d = program.dim();
    let origin = vec![0.0; d];
    let plain = Empirical::plain(program, data);
    // |x| is not differentiable at 0; there the optimality test is a
    // subgradient inclusion.
    let (f0, g0, _) = plain.mean_derivatives(&origin);
    if g0.norm() <= lambda * lip.scale {
        return Ok(Solution {
            x: origin,
            objective: f0,
            diagnostics: Diagnostics {
                iterations: 0,
                gradient_norm: 0.0,
                converged: true,
            },
            dual: None,
            multipliers: None,
            binding_mismatch: false,
        });
    }
    let start = solve_eo(problem, data)?;
    let x0 = if start.x.iter().all(|v| *v == 0.0) {
        -g0
    } else {
        DVector::from_vec(start.x)
    };
    let mut obj = Empirical {
        lipschitz: Some((lip, lambda)),
        ..plain
    };
    let mut sol = run(&mut obj, x0)?;
    sol.diagnostics.iterations += start.diagnostics.iterations;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{problem_by_id, sample_dataset};
    use approx::assert_relative_eq;

    #[test]
    fn eo_is_the_sample_mean() {
        let p = problem_by_id("gaussian-mean").unwrap();
        let data = sample_dataset(&p, 500, 4);
        let sol = solve_eo(&p, &data).unwrap();
        let mean = data.mean_draw();
        assert!(sol.diagnostics.converged);
        for (a, b) in sol.x.iter().zip(&mean) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let two = Dataset::from_scalars(&[0.0, 2.0]);
        let e = problem_by_id("exp-quadratic").unwrap();
        assert_eq!(solve_eo(&e, &two).unwrap().x, vec![1.0]);
    }

    /// Root of the empirical logistic gradient by plain bisection.
    fn bisect(data: &Dataset, p: &ProblemSpec) -> f64 {
        let grad = |x: f64| {
            let mut g = [0.0];
            let mut s = 0.0;
            for xi in data.iter() {
                p.program().loss_gradient(&[x], xi, &mut g);
                s += g[0];
            }
            s
        };
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if grad(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn logistic_eo_matches_bisection() {
        let p = problem_by_id("logistic-1d").unwrap();
        let data = sample_dataset(&p, 50, 3);
        let sol = solve_eo(&p, &data).unwrap();
        assert!((sol.x[0] - bisect(&data, &p)).abs() < 1e-8);
    }

    #[test]
    fn ridge_closed_form_and_reduction() {
        let p = problem_by_id("shifted-gaussian-mean").unwrap();
        let data = Dataset::new(
            vec![1.5, 0.5, 0.5, -0.5],
            2,
            crate::model::Provenance {
                problem: "t".into(),
                seed: 0,
            },
        );
        let sol = solve_regularized(&p, &data, &Penalty::Ridge, 0.1).unwrap();
        assert_relative_eq!(sol.x[0], 1.0 / 1.1, epsilon = 1e-14);
        assert_relative_eq!(sol.x[1], 0.0, epsilon = 1e-14);
        let eo = solve_eo(&p, &data).unwrap();
        assert_eq!(solve_regularized(&p, &data, &Penalty::Ridge, 0.0).unwrap(), eo);
        let big = solve_regularized(&p, &data, &Penalty::Ridge, 1e3).unwrap();
        let xbar = DVector::from_vec(data.mean_draw());
        assert!(DVector::from_vec(big.x).norm() <= xbar.norm() / (1.0 + 1e3) + 1e-15);
    }

    #[test]
    fn wasserstein_shift_and_domination() {
        let p = problem_by_id("logistic-1d").unwrap();
        let data = sample_dataset(&p, 20_000, 8);
        let eo = solve_eo(&p, &data).unwrap();
        assert_eq!(solve_dro_wasserstein(&p, &data, 0.0).unwrap(), eo);
        let h = Empirical::plain(p.program(), &data).mean_derivatives(&eo.x).2[(0, 0)];
        let lambda = 1e-3;
        let w = solve_dro_wasserstein(&p, &data, lambda).unwrap();
        let predicted = -lambda / h;
        let shift = w.x[0] - eo.x[0];
        assert!((shift - predicted).abs() < 0.05 * predicted.abs(), "{shift} vs {predicted}");
        let huge = solve_dro_wasserstein(&p, &data, 1e3).unwrap();
        assert!(huge.x[0].abs() < 1e-2);
    }
}
