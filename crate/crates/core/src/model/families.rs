//! Concrete loss/distribution pairs with closed-form oracles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};

use super::program::{LipschitzModulus, LossMoments, StochasticProgram};
use super::special::{
    sigmoid, softplus, softplus_integral, u2_sigmoid_prime_integral, u_sigmoid_integral,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::{gauss_legendre, integrate, Rule};
use crate::rng::DrawRng;

/// Law of the draw in a squared-loss problem.
#[derive(Debug, Clone)]
pub enum Location {
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        root: DMatrix<f64>,
    },
    /// Scalar exponential with the given rate.
    Exponential { rate: f64 },
}

impl Location {
    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::InvalidProblem(
                "covariance does not match mean dimension".into(),
            ));
        }
        let root = linalg::sym_sqrt(&cov)?;
        Ok(Location::Gaussian {
            mean: DVector::from_vec(mean),
            cov,
            root,
        })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidProblem(format!("exponential rate {rate}")));
        }
        Ok(Location::Exponential { rate })
    }

    fn dim(&self) -> usize {
        match self {
            Location::Gaussian { mean, .. } => mean.len(),
            Location::Exponential { .. } => 1,
        }
    }

    fn mean(&self) -> DVector<f64> {
        match self {
            Location::Gaussian { mean, .. } => mean.clone(),
            Location::Exponential { rate } => DVector::from_element(1, 1.0 / rate),
        }
    }

    fn covariance(&self) -> DMatrix<f64> {
        match self {
            Location::Gaussian { cov, .. } => cov.clone(),
            Location::Exponential { rate } => DMatrix::from_element(1, 1, 1.0 / (rate * rate)),
        }
    }

    /// `Var(|e|^2 / 2)` and `Cov(e, |e|^2 / 2)` for the centred draw `e`.
    fn half_square_moments(&self) -> (f64, DVector<f64>) {
        match self {
            Location::Gaussian { mean, cov, .. } => {
                (0.5 * (cov * cov).trace(), DVector::zeros(mean.len()))
            }
            Location::Exponential { rate } => {
                let (m2, m3, m4) = (rate.powi(-2), 2.0 * rate.powi(-3), 9.0 * rate.powi(-4));
                (0.25 * (m4 - m2 * m2), DVector::from_element(1, 0.5 * m3))
            }
        }
    }
}

/// `h(x, xi) = |x - xi|^2 / 2`.
#[derive(Debug, Clone)]
pub struct SquaredLoss {
    pub location: Location,
}

impl StochasticProgram for SquaredLoss {
    fn dim(&self) -> usize {
        self.location.dim()
    }

    fn draw_dim(&self) -> usize {
        self.location.dim()
    }

    fn loss(&self, x: &[f64], xi: &[f64]) -> f64 {
        0.5 * x.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn loss_gradient(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(xi) {
            *o = a - b;
        }
    }

    fn loss_hessian(&self, x: &[f64], _xi: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = 1.0;
        }
    }

    fn sample_into(&self, rng: &mut DrawRng, out: &mut [f64]) {
        match &self.location {
            Location::Gaussian { mean, root, .. } => {
                let d = mean.len();
                let mut z = DVector::zeros(d);
                for chunk in out.chunks_exact_mut(d) {
                    for v in z.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let draw = mean + root * &z;
                    chunk.copy_from_slice(draw.as_slice());
                }
            }
            Location::Exponential { rate } => {
                let law = Exp::new(*rate).expect("rate validated at construction");
                for v in out.iter_mut() {
                    *v = rng.sample(law);
                }
            }
        }
    }

    fn true_objective(&self, x: &[f64]) -> f64 {
        let delta = linalg::vector(x) - self.location.mean();
        0.5 * delta.norm_squared() + 0.5 * self.location.covariance().trace()
    }

    fn true_gradient(&self, x: &[f64]) -> DVector<f64> {
        linalg::vector(x) - self.location.mean()
    }

    fn expected_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }

    fn gradient_covariance(&self, _x: &[f64]) -> DMatrix<f64> {
        self.location.covariance()
    }

    fn loss_moments(&self, x: &[f64]) -> Option<LossMoments> {
        let delta = linalg::vector(x) - self.location.mean();
        let sigma = self.location.covariance();
        let (q, t) = self.location.half_square_moments();
        let variance = linalg::quad_form(&sigma, &delta) + q - 2.0 * delta.dot(&t);
        let cov = &sigma * &delta - t;
        Some(LossMoments {
            variance,
            covariance_with_gradient: cov.as_slice().to_vec(),
        })
    }

    fn unconstrained_optimum(&self) -> Vec<f64> {
        self.location.mean().as_slice().to_vec()
    }

    fn describe(&self) -> String {
        match &self.location {
            Location::Gaussian { mean, .. } => {
                format!("squared loss, Gaussian draws in dimension {}", mean.len())
            }
            Location::Exponential { rate } => {
                format!("squared loss, exponential draws with rate {rate}")
            }
        }
    }
}

/// Below this |x| the closed forms lose digits to cancellation and the
/// oracle integrates directly.
const LOGISTIC_SMALL_X: f64 = 0.1;

/// `h(x, xi) = ln(1 + exp(-x xi))`, `xi ~ U[low, high]`, scalar `x`.
#[derive(Debug, Clone)]
pub struct LogisticUniform {
    low: f64,
    high: f64,
    optimum: f64,
    rule: Rule,
}

impl LogisticUniform {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low < high && low.is_finite() && high.is_finite()) {
            return Err(Error::InvalidProblem(format!("uniform support [{low}, {high}]")));
        }
        let mut p = LogisticUniform {
            low,
            high,
            optimum: 0.0,
            rule: gauss_legendre(24),
        };
        p.optimum = p.solve_optimum()?;
        Ok(p)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.low, self.high)
    }

    fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        integrate(f, self.low, self.high, 16, &self.rule) / (self.high - self.low)
    }

    fn objective(&self, x: f64) -> f64 {
        if x.abs() < LOGISTIC_SMALL_X {
            return self.expect(|xi| softplus(-x * xi));
        }
        let (a, b) = (self.low, self.high);
        (softplus_integral(-x * a) - softplus_integral(-x * b)) / (x * (b - a))
    }

    fn derivative(&self, x: f64) -> f64 {
        if x.abs() < LOGISTIC_SMALL_X {
            return self.expect(|xi| -xi * sigmoid(-x * xi));
        }
        let (a, b) = (self.low, self.high);
        (u_sigmoid_integral(-x * a) - u_sigmoid_integral(-x * b)) / (x * x * (b - a))
    }

    fn second_derivative(&self, x: f64) -> f64 {
        if x.abs() < LOGISTIC_SMALL_X {
            return self.expect(|xi| xi * xi * sigmoid(x * xi) * sigmoid(-x * xi));
        }
        let (a, b) = (self.low, self.high);
        (u2_sigmoid_prime_integral(-x * a) - u2_sigmoid_prime_integral(-x * b))
            / (x * x * x * (b - a))
    }

    /// Bracketing Newton on Z'(x) = 0.
    fn solve_optimum(&self) -> Result<f64> {
        let mean = 0.5 * (self.low + self.high);
        if mean == 0.0 {
            return Ok(0.0);
        }
        // Z'(0) = -E[xi]/2, so the root lies on the side of sign(E[xi]).
        let sign = mean.signum();
        let (mut lo, mut hi) = (0.0, sign);
        let mut expand = 0;
        while self.derivative(hi) * sign < 0.0 {
            lo = hi;
            hi *= 2.0;
            expand += 1;
            if expand > 60 {
                return Err(Error::InvalidProblem(
                    "logistic loss has no finite minimizer (support on one side of 0)".into(),
                ));
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.derivative(x);
            if g == 0.0 {
                break;
            }
            if (g > 0.0) == (sign > 0.0) {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - g / self.second_derivative(x);
            let inside = (newton - lo) * (newton - hi) < 0.0;
            let next = if inside { newton } else { 0.5 * (lo + hi) };
            if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
                x = next;
                break;
            }
            x = next;
        }
        Ok(x)
    }
}

impl StochasticProgram for LogisticUniform {
    fn dim(&self) -> usize {
        1
    }

    fn draw_dim(&self) -> usize {
        1
    }

    fn loss(&self, x: &[f64], xi: &[f64]) -> f64 {
        softplus(-x[0] * xi[0])
    }

    fn loss_gradient(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        out[0] = -xi[0] * sigmoid(-x[0] * xi[0]);
    }

    fn loss_hessian(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        let u = x[0] * xi[0];
        out[0] = xi[0] * xi[0] * sigmoid(u) * sigmoid(-u);
    }

    fn sample_into(&self, rng: &mut DrawRng, out: &mut [f64]) {
        let width = self.high - self.low;
        for v in out.iter_mut() {
            *v = self.low + width * rng.random::<f64>();
        }
    }

    fn true_objective(&self, x: &[f64]) -> f64 {
        self.objective(x[0])
    }

    fn true_gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.derivative(x[0]))
    }

    fn expected_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.second_derivative(x[0]))
    }

    fn gradient_covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let x = x[0];
        let g = |xi: f64| -xi * sigmoid(-x * xi);
        let mean = self.expect(g);
        let second = self.expect(|xi| g(xi) * g(xi));
        DMatrix::from_element(1, 1, second - mean * mean)
    }

    fn loss_moments(&self, x: &[f64]) -> Option<LossMoments> {
        let x = x[0];
        let h = |xi: f64| softplus(-x * xi);
        let g = |xi: f64| -xi * sigmoid(-x * xi);
        let mh = self.expect(h);
        let mg = self.expect(g);
        let variance = self.expect(|xi| (h(xi) - mh).powi(2));
        let cov = self.expect(|xi| (h(xi) - mh) * (g(xi) - mg));
        Some(LossMoments {
            variance,
            covariance_with_gradient: vec![cov],
        })
    }

    fn unconstrained_optimum(&self) -> Vec<f64> {
        vec![self.optimum]
    }

    fn flat_point(&self) -> Option<Vec<f64>> {
        Some(vec![0.0])
    }

    fn lipschitz(&self) -> Option<LipschitzModulus> {
        Some(LipschitzModulus { scale: 1.0 })
    }

    fn describe(&self) -> String {
        format!(
            "logistic loss ln(1 + exp(-x xi)), xi ~ U[{}, {}]",
            self.low, self.high
        )
    }
}

/// Negative log-likelihood of `N(m, e^{2s})` at `xi ~ N(mean, sd^2)`,
/// decision `x = (m, s)`.
#[derive(Debug, Clone)]
pub struct GaussianNll {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianNll {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidProblem(format!("normal law N({mean}, {sd}^2)")));
        }
        Ok(GaussianNll { mean, sd })
    }

    /// Raw moments of `e = xi - m`: E e, E e^2, E e^3, E e^4.
    fn centred_moments(&self, m: f64) -> [f64; 4] {
        let d = self.mean - m;
        let v = self.sd * self.sd;
        [
            d,
            v + d * d,
            d * d * d + 3.0 * d * v,
            d.powi(4) + 6.0 * d * d * v + 3.0 * v * v,
        ]
    }
}

impl StochasticProgram for GaussianNll {
    fn dim(&self) -> usize {
        2
    }

    fn draw_dim(&self) -> usize {
        1
    }

    fn loss(&self, x: &[f64], xi: &[f64]) -> f64 {
        let e = xi[0] - x[0];
        x[1] + 0.5 * e * e * (-2.0 * x[1]).exp() + 0.5 * (2.0 * PI).ln()
    }

    fn loss_gradient(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        let e = xi[0] - x[0];
        let w = (-2.0 * x[1]).exp();
        out[0] = -e * w;
        out[1] = 1.0 - e * e * w;
    }

    fn loss_hessian(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        let e = xi[0] - x[0];
        let w = (-2.0 * x[1]).exp();
        out[0] = w;
        out[1] = 2.0 * e * w;
        out[2] = 2.0 * e * w;
        out[3] = 2.0 * e * e * w;
    }

    fn sample_into(&self, rng: &mut DrawRng, out: &mut [f64]) {
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = self.mean + self.sd * z;
        }
    }

    fn true_objective(&self, x: &[f64]) -> f64 {
        let [_, q2, _, _] = self.centred_moments(x[0]);
        x[1] + 0.5 * q2 * (-2.0 * x[1]).exp() + 0.5 * (2.0 * PI).ln()
    }

    fn true_gradient(&self, x: &[f64]) -> DVector<f64> {
        let [q1, q2, _, _] = self.centred_moments(x[0]);
        let w = (-2.0 * x[1]).exp();
        DVector::from_vec(vec![-q1 * w, 1.0 - q2 * w])
    }

    fn expected_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let [q1, q2, _, _] = self.centred_moments(x[0]);
        let w = (-2.0 * x[1]).exp();
        DMatrix::from_row_slice(2, 2, &[w, 2.0 * q1 * w, 2.0 * q1 * w, 2.0 * q2 * w])
    }

    fn gradient_covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let [q1, q2, q3, q4] = self.centred_moments(x[0]);
        let w2 = (-4.0 * x[1]).exp();
        let var_e = q2 - q1 * q1;
        let cov_e_e2 = q3 - q1 * q2;
        let var_e2 = q4 - q2 * q2;
        // grad = (-e w, 1 - e^2 w)
        DMatrix::from_row_slice(
            2,
            2,
            &[var_e * w2, cov_e_e2 * w2, cov_e_e2 * w2, var_e2 * w2],
        )
    }

    fn loss_moments(&self, x: &[f64]) -> Option<LossMoments> {
        let [q1, q2, q3, q4] = self.centred_moments(x[0]);
        let w2 = (-4.0 * x[1]).exp();
        let cov_e_e2 = q3 - q1 * q2;
        let var_e2 = q4 - q2 * q2;
        Some(LossMoments {
            variance: 0.25 * var_e2 * w2,
            covariance_with_gradient: vec![-0.5 * cov_e_e2 * w2, -0.5 * var_e2 * w2],
        })
    }

    fn unconstrained_optimum(&self) -> Vec<f64> {
        vec![self.mean, self.sd.ln()]
    }

    fn describe(&self) -> String {
        format!(
            "Gaussian negative log-likelihood in (m, log sigma), xi ~ N({}, {}^2)",
            self.mean, self.sd
        )
    }
}
