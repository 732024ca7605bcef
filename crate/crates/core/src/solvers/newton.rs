//! Damped Newton with Armijo backtracking for small dense problems.

use nalgebra::{DMatrix, DVector};

use super::SolveError;

pub const ARMIJO: f64 = 1e-4;
pub const MAX_ITERATIONS: usize = 200;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
const MAX_HALVINGS: usize = 60;

/// Smooth objective with value, gradient and Hessian.
pub trait Objective {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64, SolveError>;
    fn derivatives(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), SolveError>;
    /// Called once a trial point has been accepted.
    fn accept(&mut self, _x: &DVector<f64>) {}
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// `false` when the line search stalled on rounding with a small but
    /// not yet tolerable gradient.
    pub converged: bool,
}

/// Gradient norm under which a stalled line search still returns a point,
/// flagged as not converged.
const STALL_ACCEPT: f64 = 1e-6;

pub fn minimize(obj: &mut dyn Objective, x0: DVector<f64>) -> Result<NewtonOutcome, SolveError> {
    let mut x = x0;
    let (mut f, mut g, mut h) = obj.derivatives(&x)?;
    for iteration in 0..MAX_ITERATIONS {
        let gnorm = g.norm();
        if !f.is_finite() || !gnorm.is_finite() {
            return Err(SolveError::NonFinite);
        }
        if gnorm <= GRADIENT_TOLERANCE {
            return Ok(NewtonOutcome {
                x,
                value: f,
                gradient_norm: gnorm,
                iterations: iteration,
                converged: true,
            });
        }
        let direction = match h.clone().cholesky() {
            Some(chol) => -chol.solve(&g),
            None => -g.clone(),
        };
        let slope = g.dot(&direction);
        let slack = 4.0 * f64::EPSILON * f.abs();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &x + &direction * t;
            let ft = obj.value(&trial)?;
            if ft.is_finite() && ft <= f + ARMIJO * t * slope + slack {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            if gnorm <= STALL_ACCEPT {
                return Ok(NewtonOutcome {
                    x,
                    value: f,
                    gradient_norm: gnorm,
                    iterations: iteration,
                    converged: false,
                });
            }
            return Err(SolveError::LineSearch { gradient_norm: gnorm });
        };
        obj.accept(&next);
        x = next;
        (f, g, h) = obj.derivatives(&x)?;
    }
    let gnorm = g.norm();
    if gnorm <= GRADIENT_TOLERANCE {
        return Ok(NewtonOutcome {
            x,
            value: f,
            gradient_norm: gnorm,
            iterations: MAX_ITERATIONS,
            converged: true,
        });
    }
    Err(SolveError::NonConvergence {
        iterations: MAX_ITERATIONS,
        gradient_norm: gnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&mut self, x: &DVector<f64>) -> Result<f64, SolveError> {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }

        fn derivatives(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), SolveError> {
            let (a, b) = (x[0], x[1]);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            let h = DMatrix::from_row_slice(
                2,
                2,
                &[2.0 - 400.0 * (b - 3.0 * a * a), -400.0 * a, -400.0 * a, 200.0],
            );
            Ok((self.value(x)?, g, h))
        }
    }

    #[test]
    fn rosenbrock_with_indefinite_start() {
        let out = minimize(&mut Rosenbrock, DVector::from_vec(vec![-1.2, 1.0])).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-9);
    }
}
