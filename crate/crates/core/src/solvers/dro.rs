//! phi-divergence DRO through its convex dual.
//!
//! The inner problem `max_Q {E_Q[h] : D(Q, P_n) <= lambda}` equals
//! `min_{alpha > 0, beta} alpha E[phi*((h - beta)/alpha)] + alpha lambda + beta`.
//! It is solved by a 2-D Newton iteration whose steps are cut back so that
//! `alpha` stays positive. The outer problem in `x` uses the envelope
//! gradient `sum_i w_i grad h_i` and the Schur complement of the joint
//! Hessian in `(x, alpha, beta)`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::eo::Empirical;
use super::newton::{minimize, Objective, ARMIJO};
use super::{solve_eo, Diagnostics, DualSolution, Solution, SolveError};
use crate::divergence::PhiDivergence;
use crate::model::{Dataset, ProblemSpec};

/// Below this `alpha` the dual sits on the ess-sup branch.
pub const ALPHA_FLOOR: f64 = 1e-12;
const INNER_MAX_ITERATIONS: usize = 100;
const INNER_STEP_TOLERANCE: f64 = 1e-12;
/// Fraction of the distance to `alpha = 0` a single step may cover.
const BOUNDARY_FRACTION: f64 = 0.99;

/// Value of an inner worst-case problem and its maximizing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub value: f64,
    /// `None` for the Lagrangian form and for all-equal losses.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
}

fn mean_and_var(losses: &[f64]) -> (f64, f64) {
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn all_equal(losses: &[f64], mean: f64) -> bool {
    let (lo, hi) = losses
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| (a.min(*h), b.max(*h)));
    hi - lo <= 1e-14 * (1.0 + mean.abs())
}

fn uniform(losses: &[f64], mean: f64) -> WorstCase {
    let n = losses.len();
    WorstCase {
        value: mean,
        alpha: None,
        beta: mean,
        weights: vec![1.0 / n as f64; n],
        iterations: 0,
    }
}

/// The sup is `max h` once the uniform law on the maximizers lies in the
/// ball. The dual optimum then sits at `alpha = 0`, out of Newton's reach.
fn argmax_within_ball(losses: &[f64], div: &PhiDivergence, lambda: f64) -> Option<WorstCase> {
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = losses.iter().filter(|h| **h == max).count() as f64;
    let n = losses.len() as f64;
    let d = (k / n) * div.phi(n / k) + (1.0 - k / n) * div.phi(0.0);
    (d <= lambda).then(|| WorstCase {
        value: max,
        alpha: Some(0.0),
        beta: max,
        weights: losses.iter().map(|h| if *h == max { 1.0 / k } else { 0.0 }).collect(),
        iterations: 0,
    })
}

struct DualEval {
    value: f64,
    grad: Vector2<f64>,
    hess: Matrix2<f64>,
}

fn divergence_dual(losses: &[f64], div: &PhiDivergence, lambda: f64, alpha: f64, beta: f64) -> DualEval {
    let n = losses.len() as f64;
    let (mut m0, mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for h in losses {
        let s = (h - beta) / alpha;
        let (f, f1, f2) = div.conjugate_all(s);
        m0 += f;
        ga += f - s * f1;
        gb += f1;
        haa += f2 * s * s;
        hab += f2 * s;
        hbb += f2;
    }
    DualEval {
        value: alpha * m0 / n + alpha * lambda + beta,
        grad: Vector2::new(ga / n + lambda, 1.0 - gb / n),
        hess: Matrix2::new(haa, hab, hab, hbb) / (n * alpha),
    }
}

fn divergence_value_only(losses: &[f64], div: &PhiDivergence, lambda: f64, alpha: f64, beta: f64) -> f64 {
    let n = losses.len() as f64;
    alpha * losses.iter().map(|h| div.conjugate((h - beta) / alpha)).sum::<f64>() / n
        + alpha * lambda
        + beta
}

fn normalized_weights(losses: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut w: Vec<f64> = losses.iter().map(|h| f(*h)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn solve_divergence_inner(
    losses: &[f64],
    div: &PhiDivergence,
    lambda: f64,
    warm: Option<(f64, f64)>,
) -> Result<WorstCase, SolveError> {
    let (mean, var) = mean_and_var(losses);
    if !mean.is_finite() {
        return Err(SolveError::NonFinite);
    }
    if lambda == 0.0 || all_equal(losses, mean) {
        return Ok(uniform(losses, mean));
    }
    if let Some(top) = argmax_within_ball(losses, div, lambda) {
        return Ok(top);
    }
    let c = div.conjugate_curvature();
    let (mut alpha, mut beta) = warm.unwrap_or(((c * var / (2.0 * lambda)).sqrt(), mean));
    let scale = var.sqrt();
    for it in 0..INNER_MAX_ITERATIONS {
        if alpha < ALPHA_FLOOR {
            return Err(SolveError::DegenerateDual { alpha });
        }
        let e = divergence_dual(losses, div, lambda, alpha, beta);
        if !e.value.is_finite() {
            return Err(SolveError::NonFinite);
        }
        let newton = e
            .hess
            .try_inverse()
            .filter(|_| e.hess[(0, 0)] > 0.0 && e.hess.determinant() > 0.0)
            .map(|inv| -(inv * e.grad));
        let dir = newton.unwrap_or(-e.grad);
        // For tiny lambda alpha is huge and the Hessian nearly singular, so
        // the step test can stall at rounding level; a vanishing gradient
        // ends the iteration too.
        let small = (dir[0].abs() <= INNER_STEP_TOLERANCE * alpha
            && dir[1].abs() <= INNER_STEP_TOLERANCE * (beta.abs() + alpha + scale))
            || e.grad.norm() <= 16.0 * f64::EPSILON * (1.0 + lambda);
        let mut t = 1.0f64;
        if dir[0] < 0.0 {
            t = t.min(BOUNDARY_FRACTION * alpha / -dir[0]);
        }
        let slope = e.grad.dot(&dir);
        let slack = 4.0 * f64::EPSILON * (e.value.abs() + beta.abs());
        let mut accepted = false;
        for _ in 0..60 {
            let (a, b) = (alpha + t * dir[0], beta + t * dir[1]);
            let v = divergence_value_only(losses, div, lambda, a, b);
            if v.is_finite() && v <= e.value + ARMIJO * t * slope + slack {
                alpha = a;
                beta = b;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if small || (!accepted && newton.is_some() && dir[0].abs() <= 1e-8 * alpha) {
            if alpha < ALPHA_FLOOR {
                return Err(SolveError::DegenerateDual { alpha });
            }
            let value = divergence_value_only(losses, div, lambda, alpha, beta);
            let weights = normalized_weights(losses, |h| div.conjugate_prime((h - beta) / alpha));
            return Ok(WorstCase {
                value,
                alpha: Some(alpha),
                beta,
                weights,
                iterations: it + 1,
            });
        }
        if !accepted {
            return Err(SolveError::InnerNonConvergence {
                iterations: it + 1,
                residual: e.grad.norm(),
            });
        }
    }
    let e = divergence_dual(losses, div, lambda, alpha, beta);
    Err(SolveError::InnerNonConvergence {
        iterations: INNER_MAX_ITERATIONS,
        residual: e.grad.norm(),
    })
}

/// `max {E_Q[h] : D(Q, P_n) <= lambda}` over reweightings of the sample,
/// with the maximizing weights. `lambda = 0` gives the empirical mean.
pub fn worst_case_expectation(losses: &[f64], div: &PhiDivergence, lambda: f64) -> Result<WorstCase, SolveError> {
    if losses.is_empty() {
        return Err(SolveError::Model("no losses".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    solve_divergence_inner(losses, div, lambda, None)
}

fn lagrangian_value(losses: &[f64], div: &PhiDivergence, lambda: f64, beta: f64) -> f64 {
    let n = losses.len() as f64;
    losses.iter().map(|h| div.conjugate(lambda * (h - beta))).sum::<f64>() / (n * lambda) + beta
}

fn solve_lagrangian_inner(
    losses: &[f64],
    div: &PhiDivergence,
    lambda: f64,
    warm: Option<f64>,
) -> Result<WorstCase, SolveError> {
    let (mean, var) = mean_and_var(losses);
    if !mean.is_finite() {
        return Err(SolveError::NonFinite);
    }
    if lambda == 0.0 || all_equal(losses, mean) {
        return Ok(uniform(losses, mean));
    }
    let n = losses.len() as f64;
    let scale = var.sqrt();
    let mut beta = warm.unwrap_or(mean);
    for it in 0..INNER_MAX_ITERATIONS {
        let (mut d1, mut d2, mut v) = (0.0, 0.0, 0.0);
        for h in losses {
            let (f, f1, f2) = div.conjugate_all(lambda * (h - beta));
            v += f;
            d1 += f1;
            d2 += f2;
        }
        let value = v / (n * lambda) + beta;
        let g = 1.0 - d1 / n;
        let hess = lambda * d2 / n;
        if !value.is_finite() {
            return Err(SolveError::NonFinite);
        }
        let step = if hess > 0.0 { -g / hess } else { -g };
        let small = step.abs() <= INNER_STEP_TOLERANCE * (beta.abs() + scale);
        let slack = 4.0 * f64::EPSILON * (value.abs() + beta.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let b = beta + t * step;
            let vt = lagrangian_value(losses, div, lambda, b);
            if vt.is_finite() && vt <= value + ARMIJO * t * g * step + slack {
                beta = b;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if small || (!accepted && step.abs() <= 1e-8 * (beta.abs() + scale)) {
            let weights = normalized_weights(losses, |h| div.conjugate_prime(lambda * (h - beta)));
            return Ok(WorstCase {
                value: lagrangian_value(losses, div, lambda, beta),
                alpha: None,
                beta,
                weights,
                iterations: it + 1,
            });
        }
        if !accepted {
            return Err(SolveError::InnerNonConvergence {
                iterations: it + 1,
                residual: g.abs(),
            });
        }
    }
    Err(SolveError::InnerNonConvergence {
        iterations: INNER_MAX_ITERATIONS,
        residual: f64::NAN,
    })
}

/// `max_Q {E_Q[h] - D(Q, P_n) / lambda}`, via the 1-D dual
/// `min_beta (1/lambda) E[phi*(lambda (h - beta))] + beta`.
pub fn lagrangian_worst_case(losses: &[f64], div: &PhiDivergence, lambda: f64) -> Result<WorstCase, SolveError> {
    if losses.is_empty() {
        return Err(SolveError::Model("no losses".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    solve_lagrangian_inner(losses, div, lambda, None)
}

#[derive(Clone, Copy)]
enum Inner {
    Ball,
    Lagrangian,
}

struct DroObjective<'a> {
    emp: Empirical<'a>,
    div: &'a PhiDivergence,
    lambda: f64,
    inner: Inner,
    warm: Option<(f64, f64)>,
    last: Option<WorstCase>,
}

impl DroObjective<'_> {
    fn losses(&self, x: &[f64]) -> Vec<f64> {
        self.emp.data.iter().map(|xi| self.emp.program.loss(x, xi)).collect()
    }

    fn solve_inner(&self, losses: &[f64]) -> Result<WorstCase, SolveError> {
        match self.inner {
            // At alpha = 0 the objective is max_i h(x, xi_i), which has no
            // Hessian for the outer Newton step.
            Inner::Ball => match solve_divergence_inner(losses, self.div, self.lambda, self.warm)? {
                WorstCase { alpha: Some(alpha), .. } if alpha < ALPHA_FLOOR => Err(SolveError::DegenerateDual { alpha }),
                wc => Ok(wc),
            },
            Inner::Lagrangian => {
                solve_lagrangian_inner(losses, self.div, self.lambda, self.warm.map(|w| w.1))
            }
        }
    }
}

impl Objective for DroObjective<'_> {
    fn value(&mut self, x: &DVector<f64>) -> Result<f64, SolveError> {
        let losses = self.losses(x.as_slice());
        Ok(self.solve_inner(&losses)?.value)
    }

    fn derivatives(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), SolveError> {
        let xs = x.as_slice();
        let d = xs.len();
        let losses = self.losses(xs);
        let wc = self.solve_inner(&losses)?;
        let n = losses.len() as f64;
        let program = self.emp.program;
        let mut grad = DVector::zeros(d);
        let mut fxx = DMatrix::zeros(d, d);
        let mut fxy = DMatrix::zeros(d, 2);
        let (mut yaa, mut yab, mut ybb) = (0.0, 0.0, 0.0);
        let mut gi = vec![0.0; d];
        let mut hi = vec![0.0; d * d];
        for (xi, h) in self.emp.data.iter().zip(&losses) {
            program.loss_gradient(xs, xi, &mut gi);
            program.loss_hessian(xs, xi, &mut hi);
            let g = DVector::from_column_slice(&gi);
            let hm = DMatrix::from_row_slice(d, d, &hi);
            // Per-draw conjugate weights and the outer-product coefficient.
            let (w1, w2, s) = match (self.inner, wc.alpha) {
                (Inner::Lagrangian, _) => {
                    let (_, f1, f2) = self.div.conjugate_all(self.lambda * (h - wc.beta));
                    (f1, self.lambda * f2, 0.0)
                }
                (Inner::Ball, Some(alpha)) => {
                    let s = (h - wc.beta) / alpha;
                    let (_, f1, f2) = self.div.conjugate_all(s);
                    (f1, f2 / alpha, s)
                }
                (Inner::Ball, None) => (1.0, 0.0, 0.0),
            };
            grad += &g * w1;
            fxx += hm * w1 + &g * g.transpose() * w2;
            match self.inner {
                Inner::Ball => {
                    let mut c0 = fxy.column_mut(0);
                    c0 -= &g * (w2 * s);
                    let mut c1 = fxy.column_mut(1);
                    c1 -= &g * w2;
                    yaa += w2 * s * s;
                    yab += w2 * s;
                    ybb += w2;
                }
                Inner::Lagrangian => {
                    let mut c1 = fxy.column_mut(1);
                    c1 -= &g * w2;
                    ybb += w2;
                }
            }
        }
        grad /= n;
        fxx /= n;
        fxy /= n;
        let (yaa, yab, ybb) = (yaa / n, yab / n, ybb / n);
        let mut hess = fxx;
        match (self.inner, wc.alpha) {
            (Inner::Ball, None) => {}
            (Inner::Ball, Some(_)) => {
                let fyy = Matrix2::new(yaa, yab, yab, ybb);
                if let Some(inv) = fyy.try_inverse().filter(|_| fyy.determinant() > 0.0) {
                    let inv = DMatrix::from_row_slice(2, 2, &[inv[(0, 0)], inv[(0, 1)], inv[(1, 0)], inv[(1, 1)]]);
                    hess -= &fxy * inv * fxy.transpose();
                }
            }
            (Inner::Lagrangian, _) => {
                if ybb > 0.0 {
                    let c = fxy.column(1).into_owned();
                    hess -= &c * c.transpose() / ybb;
                }
            }
        }
        crate::linalg::symmetrize(&mut hess);
        self.warm = Some((wc.alpha.unwrap_or(0.0), wc.beta));
        if wc.alpha.is_none() && matches!(self.inner, Inner::Ball) {
            self.warm = None;
        }
        let value = wc.value;
        self.last = Some(wc);
        Ok((value, grad, hess))
    }
}

/// Is there a reweighting `Q` with `D(Q, P_n) <= lambda` and
/// `E_Q[g] = 0`? Decided through the concave dual of
/// `min {D(Q, P_n) : E_Q[g] = 0}`, namely
/// `max_{eta, beta} beta - E_{P_n}[phi*(beta + eta' g)]`.
fn zero_in_reweighted_means(grads: &[DVector<f64>], div: &PhiDivergence, lambda: f64) -> bool {
    let d = grads[0].len();
    let n = grads.len() as f64;
    let dual = |z: &DVector<f64>| {
        let beta = z[d];
        let eta = z.rows(0, d);
        beta - grads.iter().map(|g| div.conjugate(beta + eta.dot(g))).sum::<f64>() / n
    };
    let mut z = DVector::zeros(d + 1);
    let mut value = dual(&z);
    for _ in 0..INNER_MAX_ITERATIONS {
        if value > lambda {
            return false;
        }
        let mut grad = DVector::zeros(d + 1);
        let mut hess = DMatrix::zeros(d + 1, d + 1);
        grad[d] = 1.0;
        for g in grads {
            let s = z[d] + z.rows(0, d).dot(g);
            let (_, f1, f2) = div.conjugate_all(s);
            let mut u = DVector::zeros(d + 1);
            u.rows_mut(0, d).copy_from(g);
            u[d] = 1.0;
            grad -= &u * (f1 / n);
            hess += &u * u.transpose() * (f2 / n);
        }
        if grad.norm() <= 1e-12 {
            return value <= lambda;
        }
        // Ascent on a concave function: solve (-Hessian) step = grad.
        hess += DMatrix::identity(d + 1, d + 1) * 1e-12;
        let step = hess.cholesky().map_or_else(|| grad.clone(), |c| c.solve(&grad));
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let zn = &z + &step * t;
            let vn = dual(&zn);
            if vn.is_finite() && vn >= value + ARMIJO * t * grad.dot(&step) {
                z = zn;
                value = vn;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return value <= lambda;
        }
    }
    value <= lambda
}

/// Optimality of a flat point `x0` of the ball problem: near `x0` the
/// worst case is `h0 + sup_Q E_Q[grad h]'(x - x0)`, which is nonnegative in
/// every direction iff some `Q` in the ball makes `E_Q[grad h]` vanish.
fn flat_point_solution(
    problem: &ProblemSpec,
    data: &Dataset,
    div: &PhiDivergence,
    lambda: f64,
) -> Option<Solution> {
    let program = problem.program();
    let x0 = program.flat_point()?;
    let losses: Vec<f64> = data.iter().map(|xi| program.loss(&x0, xi)).collect();
    let (mean, _) = mean_and_var(&losses);
    if !all_equal(&losses, mean) {
        return None;
    }
    let d = x0.len();
    let mut gi = vec![0.0; d];
    let grads: Vec<DVector<f64>> = data
        .iter()
        .map(|xi| {
            program.loss_gradient(&x0, xi, &mut gi);
            DVector::from_column_slice(&gi)
        })
        .collect();
    if !zero_in_reweighted_means(&grads, div, lambda) {
        return None;
    }
    let wc = uniform(&losses, mean);
    Some(Solution {
        x: x0,
        objective: wc.value,
        diagnostics: Diagnostics {
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        },
        dual: Some(DualSolution {
            alpha: None,
            beta: wc.beta,
            weights: wc.weights,
        }),
        multipliers: None,
        binding_mismatch: false,
    })
}

fn solve_dro(
    problem: &ProblemSpec,
    data: &Dataset,
    div: &PhiDivergence,
    lambda: f64,
    inner: Inner,
) -> Result<Solution, SolveError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolveError::InvalidLambda(lambda));
    }
    if lambda == 0.0 {
        return solve_eo(problem, data);
    }
    if matches!(inner, Inner::Ball) {
        if let Some(sol) = flat_point_solution(problem, data, div, lambda) {
            return Ok(sol);
        }
    }
    let start = solve_eo(problem, data)?;
    let mut obj = DroObjective {
        emp: Empirical::plain(problem.program(), data),
        div,
        lambda,
        inner,
        warm: None,
        last: None,
    };
    let out = minimize(&mut obj, DVector::from_vec(start.x))?;
    // The last derivative evaluation was at the returned point.
    let wc = obj.last.take().ok_or(SolveError::NonFinite)?;
    Ok(Solution {
        x: out.x.as_slice().to_vec(),
        objective: out.value,
        diagnostics: Diagnostics {
            iterations: out.iterations + start.diagnostics.iterations,
            gradient_norm: out.gradient_norm,
            converged: out.converged,
        },
        dual: Some(DualSolution {
            alpha: wc.alpha,
            beta: wc.beta,
            weights: wc.weights,
        }),
        multipliers: None,
        binding_mismatch: false,
    })
}

/// `min_x max {E_Q[h(x, xi)] : D(Q, P_n) <= lambda}`.
pub fn solve_dro_divergence(
    problem: &ProblemSpec,
    data: &Dataset,
    div: &PhiDivergence,
    lambda: f64,
) -> Result<Solution, SolveError> {
    solve_dro(problem, data, div, lambda, Inner::Ball)
}

/// `min_x max_Q {E_Q[h(x, xi)] - D(Q, P_n) / lambda}`.
pub fn solve_dro_lagrangian(
    problem: &ProblemSpec,
    data: &Dataset,
    div: &PhiDivergence,
    lambda: f64,
) -> Result<Solution, SolveError> {
    solve_dro(problem, data, div, lambda, Inner::Lagrangian)
}
