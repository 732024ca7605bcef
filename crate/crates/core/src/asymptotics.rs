//! Limit laws of the scaled optimality gap and Monte Carlo checks of the
//! first-order expansions behind them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::PhiDivergence;
use crate::dominance::EmpiricalSample;
use crate::error::{Error, Result};
use crate::linalg::{self, PSD_TOLERANCE};
use crate::model::{eo_influence, sample_dataset, true_gap, Dataset, ProblemSpec};
use crate::rng::{replication_seed, stream};
use crate::solvers::{
    solve, solve_dro_lagrangian, solve_eo, ProcedureKind, ProcedureSpec, Solution,
};

/// Regime of `a = lim sqrt(n) lambda_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrichotomyCase {
    /// `a = 0`: same limit as EO.
    Vanishing,
    /// `|a| = inf`: the bias dominates and `n G` blows up.
    Exploding,
    /// `0 < |a| < inf`: bias and noise on the same scale.
    Balanced,
}

impl TrichotomyCase {
    pub fn id(self) -> u8 {
        match self {
            TrichotomyCase::Vanishing => 1,
            TrichotomyCase::Exploding => 2,
            TrichotomyCase::Balanced => 3,
        }
    }
}

/// NaN is treated as finite and nonzero.
pub fn trichotomy_case(a: f64) -> TrichotomyCase {
    if a == 0.0 {
        TrichotomyCase::Vanishing
    } else if a.is_infinite() {
        TrichotomyCase::Exploding
    } else {
        TrichotomyCase::Balanced
    }
}

/// How `lambda` scales with `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum LambdaRule {
    Constant { c: f64 },
    /// `lambda_n = a / sqrt(n)`.
    AOverSqrtN { a: f64 },
    /// `lambda_n = n^-gamma`.
    Power { gamma: f64 },
}

impl LambdaRule {
    pub fn resolve(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            LambdaRule::Constant { c } => c,
            LambdaRule::AOverSqrtN { a } => a / n.sqrt(),
            LambdaRule::Power { gamma } => n.powf(-gamma),
        }
    }

    /// `lim sqrt(n) lambda_n`.
    pub fn limit_a(&self) -> f64 {
        match *self {
            LambdaRule::Constant { c: 0.0 } => 0.0,
            LambdaRule::Constant { c } => c.signum() * f64::INFINITY,
            LambdaRule::AOverSqrtN { a } => a,
            LambdaRule::Power { gamma } if gamma > 0.5 => 0.0,
            LambdaRule::Power { gamma } if gamma < 0.5 => f64::INFINITY,
            LambdaRule::Power { .. } => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LambdaRule::Constant { c } => c >= 0.0 && c.is_finite(),
            LambdaRule::AOverSqrtN { a } => a >= 0.0 && a.is_finite(),
            LambdaRule::Power { gamma } => gamma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("lambda rule {self:?} does not give lambda >= 0")))
        }
    }
}

/// `(H, Sigma, K, a)` of the limit `1/2 Y'HY + 1/2 a^2 K'HK + a K'HY`,
/// `Y ~ N(0, Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLawParams {
    h: DMatrix<f64>,
    sigma: DMatrix<f64>,
    root: DMatrix<f64>,
    k: DVector<f64>,
    a: f64,
    degenerate: bool,
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = 1.0 + m.amax();
    if !m.is_square() || !linalg::is_symmetric(m, 1e-10 * scale) {
        return Err(Error::NotPsd(format!("{name} is not symmetric")));
    }
    if linalg::min_eigenvalue(m) < -PSD_TOLERANCE * scale {
        return Err(Error::NotPsd(format!("{name} has a negative eigenvalue")));
    }
    Ok(())
}

impl LimitLawParams {
    pub fn new(h: DMatrix<f64>, sigma: DMatrix<f64>, k: DVector<f64>, a: f64) -> Result<Self> {
        let d = k.len();
        if h.shape() != (d, d) || sigma.shape() != (d, d) {
            return Err(Error::InvalidArgument(format!(
                "H is {:?}, Sigma is {:?}, K has length {d}",
                h.shape(),
                sigma.shape()
            )));
        }
        if a.is_nan() {
            return Err(Error::InvalidArgument("a is NaN".into()));
        }
        check_psd("H", &h)?;
        check_psd("Sigma", &sigma)?;
        let root = linalg::sym_sqrt(&sigma)?;
        let degenerate = linalg::quad_form(&h, &k) < crate::model::DEGENERACY_THRESHOLD;
        Ok(LimitLawParams {
            h,
            sigma,
            root,
            k,
            a,
            degenerate,
        })
    }

    /// Parameters read off a problem's certificate for `procedure`.
    pub fn from_certificate(problem: &ProblemSpec, procedure: &ProcedureKind, a: f64) -> Result<Self> {
        let cert = problem.certificate();
        let bias = cert.bias_vector(&ProcedureSpec::new(procedure.clone(), 0.0))?;
        Self::new(
            cert.hessian.clone(),
            cert.influence_covariance()?.clone(),
            linalg::vector(&bias.k),
            a,
        )
    }

    pub fn with_a(&self, a: f64) -> Self {
        LimitLawParams { a, ..self.clone() }
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn k(&self) -> &DVector<f64> {
        &self.k
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `K'HK` below the degeneracy threshold.
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn case(&self) -> TrichotomyCase {
        trichotomy_case(self.a)
    }

    pub fn bias_curvature(&self) -> f64 {
        linalg::quad_form(&self.h, &self.k)
    }
}

/// Draws of the limit law with the three paired components.
#[derive(Debug, Clone)]
pub struct LimitLawSample {
    pub sample: EmpiricalSample,
    /// `1/2 Y'HY`.
    pub base: Vec<f64>,
    /// `1/2 a^2 K'HK`.
    pub shift: f64,
    /// `a K'HY`, mean zero given `base`.
    pub noise: Vec<f64>,
    pub case: TrichotomyCase,
}

/// `m` draws of the limit law. In the exploding case the law of the
/// `lambda^-2`-scaled gap is the constant `1/2 K'HK`, returned as `shift`
/// with zero base and noise.
pub fn sample_limit_law(params: &LimitLawParams, m: usize, seed: u64) -> Result<LimitLawSample> {
    if m == 0 {
        return Err(Error::Sample("empty limit-law sample".into()));
    }
    let case = params.case();
    let curvature = params.bias_curvature();
    let label = format!("limit(a={})", params.a);
    if case == TrichotomyCase::Exploding {
        let c = 0.5 * curvature;
        return Ok(LimitLawSample {
            sample: EmpiricalSample::new(label, vec![c; m])?,
            base: vec![0.0; m],
            shift: c,
            noise: vec![0.0; m],
            case,
        });
    }
    let d = params.k.len();
    let hk = &params.h * &params.k;
    let shift = 0.5 * params.a * params.a * curvature;
    let mut rng = stream(seed);
    let mut z = DVector::zeros(d);
    let mut base = Vec::with_capacity(m);
    let mut noise = Vec::with_capacity(m);
    for _ in 0..m {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let y = &params.root * &z;
        base.push(0.5 * linalg::quad_form(&params.h, &y));
        noise.push(params.a * hk.dot(&y));
    }
    let values = base.iter().zip(&noise).map(|(b, e)| b + shift + e).collect();
    Ok(LimitLawSample {
        sample: EmpiricalSample::new(label, values)?,
        base,
        shift,
        noise,
        case,
    })
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `|x_hat - x*|^2`.
    pub sq_error: f64,
    /// Value of the solved formulation at `x_hat`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub error: String,
}

/// Gaps of one procedure at one `n`, in replication order.
#[derive(Debug, Clone)]
pub struct GapDistribution {
    pub procedure: ProcedureSpec,
    pub n: usize,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
}

impl GapDistribution {
    pub fn replications(&self) -> usize {
        self.records.len() + self.failures.len()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gap).collect()
    }

    /// `factor * G` as a sample.
    pub fn scaled_by(&self, factor: f64) -> Result<EmpiricalSample> {
        EmpiricalSample::new(
            format!("{}@n={}", self.procedure.label(), self.n),
            self.records.iter().map(|r| factor * r.gap).collect(),
        )
    }

    /// `n G`.
    pub fn scaled(&self) -> Result<EmpiricalSample> {
        self.scaled_by(self.n as f64)
    }
}

/// Solves replication `rep` at size `n`; the dataset depends only on
/// `(seed, n, rep)`, so every procedure sees the same data.
pub fn replicate(
    problem: &ProblemSpec,
    procedure: &ProcedureSpec,
    n: usize,
    seed: u64,
    rep: usize,
) -> std::result::Result<(Solution, f64), String> {
    let data = sample_dataset(problem, n, replication_seed(seed, n, rep));
    let sol = solve(problem, &data, procedure).map_err(|e| e.to_string())?;
    let gap = true_gap(problem, &sol.x).map_err(|e| e.to_string())?;
    Ok((sol, gap))
}

/// `replications` independent gaps. Failed replications are listed, not
/// dropped silently.
pub fn gap_distribution(
    problem: &ProblemSpec,
    procedure: &ProcedureSpec,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<GapDistribution> {
    if n == 0 || replications == 0 {
        return Err(Error::InvalidArgument("n and replications must be positive".into()));
    }
    let outcomes: Vec<_> = (0..replications)
        .into_par_iter()
        .map(|rep| (rep, replicate(problem, procedure, n, seed, rep)))
        .collect();
    let x_star = &problem.certificate().optimum;
    let mut records = Vec::with_capacity(replications);
    let mut failures = Vec::new();
    for (rep, out) in outcomes {
        match out {
            Ok((sol, gap)) => records.push(ReplicationRecord {
                rep,
                gap,
                converged: sol.diagnostics.converged,
                iterations: sol.diagnostics.iterations,
                sq_error: sol.x.iter().zip(x_star).map(|(a, b)| (a - b).powi(2)).sum(),
                objective: sol.objective,
            }),
            Err(error) => failures.push(ReplicationFailure { rep, error }),
        }
    }
    Ok(GapDistribution {
        procedure: procedure.clone(),
        n,
        records,
        failures,
    })
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let (x, y) = (a.sorted(), b.sorted());
    let (m, n) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / m - j as f64 / n).abs());
    }
    best
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `log y` against `log x`; `None` if any `y` is not positive.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) || x.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    Some(linear_fit(&lx, &ly).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub n: usize,
    pub lambda: f64,
    pub mean_residual: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Slope of `log mean_residual` on `log(1/sqrt(n) + lambda_eff)`;
    /// `None` when some residual vanishes.
    pub slope: Option<f64>,
    pub rows: Vec<ResidualRow>,
}

impl RateFit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,lambda,mean_residual,se\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.n, r.lambda, r.mean_residual, r.se));
        }
        out
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 sample sizes, got {}",
            n_grid.len()
        )));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::InvalidArgument("sample sizes must increase strictly".into()));
    }
    Ok(())
}

/// Fits the decay of a per-replication scalar over an n-grid.
fn rate_over_grid(
    n_grid: &[usize],
    rule: &LambdaRule,
    reps: usize,
    effective: impl Fn(f64) -> f64 + Sync,
    per_rep: impl Fn(usize, f64, usize) -> Result<f64> + Sync,
) -> Result<RateFit> {
    check_grid(n_grid)?;
    rule.validate()?;
    if reps < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    let mut scales = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let lambda = rule.resolve(n);
        let values = (0..reps)
            .into_par_iter()
            .map(|rep| per_rep(n, lambda, rep))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, se) = mean_se(&values);
        rows.push(ResidualRow {
            n,
            lambda,
            mean_residual: mean,
            se,
        });
        scales.push(1.0 / (n as f64).sqrt() + effective(lambda));
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean_residual).collect();
    Ok(RateFit {
        slope: loglog_slope(&scales, &means),
        rows,
    })
}

/// `|x_hat - x* - <IF, P_n - P> - lambda_eff K|` averaged over replications,
/// per `n`, with its log-log decay rate.
pub fn expansion_residual_rate(
    problem: &ProblemSpec,
    procedure: &ProcedureKind,
    n_grid: &[usize],
    rule: &LambdaRule,
    reps: usize,
    seed: u64,
) -> Result<RateFit> {
    let cert = problem.certificate();
    let k = linalg::vector(&cert.bias_vector(&ProcedureSpec::new(procedure.clone(), 0.0))?.k);
    let x_star = linalg::vector(&cert.optimum);
    let effective = |lambda: f64| ProcedureSpec::new(procedure.clone(), lambda).effective_lambda();
    rate_over_grid(n_grid, rule, reps, effective, |n, lambda, rep| {
        let data = sample_dataset(problem, n, replication_seed(seed, n, rep));
        let spec = ProcedureSpec::new(procedure.clone(), lambda);
        let sol = solve(problem, &data, &spec)?;
        let mut linear = DVector::zeros(problem.dim());
        for xi in data.iter() {
            linear += eo_influence(problem, xi)?;
        }
        linear /= n as f64;
        let r = linalg::vector(&sol.x) - &x_star - linear - &k * spec.effective_lambda();
        Ok(r.norm())
    })
}

/// `|x_hat_a - x_hat_b|` on shared datasets, with its decay rate against
/// `1/sqrt(n) + lambda`.
pub fn procedure_distance_rate(
    problem: &ProblemSpec,
    a: &ProcedureKind,
    b: &ProcedureKind,
    n_grid: &[usize],
    rule: &LambdaRule,
    reps: usize,
    seed: u64,
) -> Result<RateFit> {
    rate_over_grid(n_grid, rule, reps, |l| l, |n, lambda, rep| {
        let data = sample_dataset(problem, n, replication_seed(seed, n, rep));
        let xa = solve(problem, &data, &ProcedureSpec::new(a.clone(), lambda))?.x;
        let xb = solve(problem, &data, &ProcedureSpec::new(b.clone(), lambda))?.x;
        Ok((linalg::vector(&xa) - linalg::vector(&xb)).norm())
    })
}

/// Observed and predicted `E[G(lambda)] - E[G(EO)]` on paired datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapBias {
    pub observed: f64,
    pub se: f64,
    /// `1/2 lambda_eff^2 K'HK`.
    pub predicted: f64,
    pub replications: usize,
}

impl GapBias {
    pub fn within(&self, z: f64) -> bool {
        (self.observed - self.predicted).abs() <= z * self.se
    }
}

pub fn expected_gap_bias(
    problem: &ProblemSpec,
    procedure: &ProcedureSpec,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<GapBias> {
    let bias = problem.certificate().bias_vector(procedure)?;
    if bias.degenerate {
        return Err(Error::DegenerateBias(bias.curvature));
    }
    if reps < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    let eo = ProcedureSpec::eo();
    let diffs = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = sample_dataset(problem, n, replication_seed(seed, n, rep));
            let a = solve(problem, &data, procedure)?;
            let b = solve(problem, &data, &eo)?;
            Ok(true_gap(problem, &a.x)? - true_gap(problem, &b.x)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (observed, se) = mean_se(&diffs);
    let l = procedure.effective_lambda();
    Ok(GapBias {
        observed,
        se,
        predicted: 0.5 * l * l * bias.curvature,
        replications: reps,
    })
}

/// `tr(H^-1 Cov(grad h(x*, xi)))` from the certificate.
pub fn cramer_rao_trace(problem: &ProblemSpec) -> Result<f64> {
    let cert = problem.certificate();
    let hinv = linalg::inverse(&cert.objective_hessian)?;
    Ok((hinv * &cert.gradient_covariance).trace())
}

/// The same trace with `H` and `Cov(grad h)` estimated from `draws`
/// Monte Carlo samples at `x*`.
pub fn cramer_rao_trace_monte_carlo(problem: &ProblemSpec, draws: usize, seed: u64) -> Result<f64> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least two draws".into()));
    }
    let data = sample_dataset(problem, draws, seed);
    let p = problem.program();
    let x = &problem.certificate().optimum;
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut hi = vec![0.0; d * d];
    let mut h = DMatrix::zeros(d, d);
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    for xi in data.iter() {
        p.loss_gradient(x, xi, &mut g);
        p.loss_hessian(x, xi, &mut hi);
        let gv = DVector::from_column_slice(&g);
        h += DMatrix::from_row_slice(d, d, &hi);
        outer += &gv * gv.transpose();
        sum += gv;
    }
    let m = draws as f64;
    let mean = sum / m;
    let cov = (outer - &mean * mean.transpose() * m) / (m - 1.0);
    let hinv = linalg::inverse(&(h / m))?;
    Ok((hinv * cov).trace())
}

/// Residuals of the small-radius expansion
/// `sup_{D(Q, P_n) <= lambda} E_Q[h] = mean + sqrt(2 lambda phi*''(0) Var) + O(lambda)`.
pub fn worst_case_expansion_residuals(
    losses: &[f64],
    div: &PhiDivergence,
    lambdas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
    let c = div.conjugate_curvature();
    lambdas
        .iter()
        .map(|&l| {
            let wc = crate::solvers::worst_case_expectation(losses, div, l)?;
            Ok((l, (wc.value - mean - (2.0 * l * c * var).sqrt()).abs()))
        })
        .collect()
}

/// Per-coordinate least-squares slope of `x_hat(lambda) - x_hat(EO)`
/// against `lambda_eff`, through the origin.
pub fn bias_slope(
    problem: &ProblemSpec,
    data: &Dataset,
    procedure: &ProcedureKind,
    lambdas: &[f64],
) -> Result<Vec<f64>> {
    let eo = solve_eo(problem, data)?;
    let d = problem.dim();
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for &lambda in lambdas {
        let spec = ProcedureSpec::new(procedure.clone(), lambda);
        let sol = solve(problem, data, &spec)?;
        let l = spec.effective_lambda();
        for j in 0..d {
            num[j] += (sol.x[j] - eo.x[j]) * l;
        }
        den += l * l;
    }
    Ok(num.into_iter().map(|v| v / den).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdroRow {
    pub lambda: f64,
    /// `E_{P_n}[h(x_L)] - E_{P_n}[h(x_EO)]`.
    pub mean_change: f64,
    pub mean_se: f64,
    /// `Var_{P_n}(h(x_L)) - Var_{P_n}(h(x_EO))`.
    pub variance_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdroCheck {
    pub rows: Vec<LdroRow>,
    /// Fit of `mean_change = A lambda^2`.
    pub mean_coefficient: f64,
    /// Fit of `variance_change = B lambda`.
    pub variance_slope: f64,
    /// `1/2 c^2 Cov' H^-1 Cov` with `c = phi*''(0)`, moments at `x_EO`.
    pub predicted_mean_coefficient: f64,
    /// `-2 c Cov' H^-1 Cov`.
    pub predicted_variance_slope: f64,
}

fn loss_mean_var(problem: &ProblemSpec, data: &Dataset, x: &[f64]) -> (Vec<f64>, f64, f64) {
    let h: Vec<f64> = data.iter().map(|xi| problem.program().loss(x, xi)).collect();
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (h, mean, var)
}

/// First-order effect of Lagrangian DRO on the in-sample mean and variance
/// of the loss, against the prediction from empirical moments at `x_EO`.
pub fn ldro_bias_variance_check(
    problem: &ProblemSpec,
    data: &Dataset,
    div: &PhiDivergence,
    lambdas: &[f64],
) -> Result<LdroCheck> {
    let eo = solve_eo(problem, data)?;
    let p = problem.program();
    let d = problem.dim();
    let (h0, mean0, var0) = loss_mean_var(problem, data, &eo.x);
    // Cov_n(h, grad h) and E_n[grad^2 h] at x_EO.
    let mut cov = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    let mut g = vec![0.0; d];
    let mut hi = vec![0.0; d * d];
    let mut gsum = DVector::zeros(d);
    for (xi, h) in data.iter().zip(&h0) {
        p.loss_gradient(&eo.x, xi, &mut g);
        p.loss_hessian(&eo.x, xi, &mut hi);
        let gv = DVector::from_column_slice(&g);
        cov += &gv * (h - mean0);
        gsum += gv;
        hess += DMatrix::from_row_slice(d, d, &hi);
    }
    let n = data.len() as f64;
    cov /= n;
    hess /= n;
    let q = linalg::quad_form(&linalg::inverse(&hess)?, &cov);
    let c = div.conjugate_curvature();
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let x = if lambda == 0.0 {
            eo.x.clone()
        } else {
            solve_dro_lagrangian(problem, data, div, lambda)?.x
        };
        let (h, mean, var) = loss_mean_var(problem, data, &x);
        let diffs: Vec<f64> = h.iter().zip(&h0).map(|(a, b)| a - b).collect();
        let (_, se) = mean_se(&diffs);
        rows.push(LdroRow {
            lambda,
            mean_change: mean - mean0,
            mean_se: se,
            variance_change: var - var0,
        });
    }
    let through_origin = |pow: i32, f: fn(&LdroRow) -> f64| {
        let num: f64 = rows.iter().map(|r| f(r) * r.lambda.powi(pow)).sum();
        let den: f64 = rows.iter().map(|r| r.lambda.powi(2 * pow)).sum();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    Ok(LdroCheck {
        mean_coefficient: through_origin(2, |r| r.mean_change),
        variance_slope: through_origin(1, |r| r.variance_change),
        predicted_mean_coefficient: 0.5 * c * c * q,
        predicted_variance_slope: -2.0 * c * q,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceId;
    use crate::dominance::{icx_dominates, mps_check, DominancePolicy, Verdict};
    use crate::model::problem_by_id;
    use crate::solvers::Penalty;

    fn identity_params(k: &[f64], a: f64) -> LimitLawParams {
        LimitLawParams::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), linalg::vector(k), a).unwrap()
    }

    #[test]
    fn cases() {
        assert_eq!(trichotomy_case(0.0).id(), 1);
        assert_eq!(trichotomy_case(f64::INFINITY).id(), 2);
        assert_eq!(trichotomy_case(f64::NEG_INFINITY).id(), 2);
        assert_eq!(trichotomy_case(1.5).id(), 3);
        assert_eq!(LambdaRule::Power { gamma: 0.75 }.limit_a(), 0.0);
        assert_eq!(LambdaRule::Power { gamma: 0.25 }.limit_a(), f64::INFINITY);
        assert_eq!(LambdaRule::AOverSqrtN { a: 1.0 }.resolve(400), 0.05);
    }

    #[test]
    fn limit_law_means() {
        let s = sample_limit_law(&identity_params(&[1.0, 0.0], 0.0), 100_000, 1).unwrap();
        let sum = s.sample.summary();
        assert!((sum.mean - 1.0).abs() < 4.0 * sum.standard_error());
        let s = sample_limit_law(&identity_params(&[1.0, 0.0], 1.0), 100_000, 2).unwrap();
        let sum = s.sample.summary();
        assert!((sum.mean - 1.5).abs() < 4.0 * sum.standard_error());
        assert_eq!(s.shift, 0.5);
        let c = sample_limit_law(&identity_params(&[1.0, 1.0], f64::INFINITY), 10, 3).unwrap();
        assert!(c.sample.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn limit_law_decomposition_is_a_spread() {
        let s = sample_limit_law(&identity_params(&[1.0, 0.0], 1.0), 100_000, 4).unwrap();
        let base = EmpiricalSample::new("base", s.base.clone()).unwrap();
        assert!(mps_check(&base, s.shift, &s.noise, 10).unwrap().passes(3.0));
        let eo = sample_limit_law(&identity_params(&[1.0, 0.0], 0.0), 100_000, 4).unwrap();
        let p = DominancePolicy::default();
        assert_eq!(icx_dominates(&eo.sample, &s.sample, &p).verdict, Verdict::Dominated);
    }

    #[test]
    fn rejects_non_psd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(LimitLawParams::new(bad, DMatrix::identity(2, 2), DVector::zeros(2), 0.0).is_err());
        let params = LimitLawParams::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DVector::zeros(2), 1.0).unwrap();
        assert!(params.degenerate());
    }

    #[test]
    fn ks_examples() {
        let a = EmpiricalSample::new("a", vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(ks_distance(&a, &a), 0.0);
        let z = EmpiricalSample::new("z", vec![0.0]).unwrap();
        let o = EmpiricalSample::new("o", vec![1.0]).unwrap();
        assert_eq!(ks_distance(&z, &o), 1.0);
        let p = identity_params(&[0.0, 0.0], 0.0);
        let s1 = sample_limit_law(&p, 10_000, 5).unwrap().sample;
        let s2 = sample_limit_law(&p, 10_000, 6).unwrap().sample;
        assert!(ks_distance(&s1, &s2) <= 0.03);
    }

    /// Brute-force KS over every pooled point.
    #[test]
    fn ks_matches_brute_force() {
        let a = EmpiricalSample::new("a", vec![0.3, 1.0, 1.0, 2.5, -1.0]).unwrap();
        let b = EmpiricalSample::new("b", vec![1.0, 0.2, 3.0]).unwrap();
        let cdf = |s: &EmpiricalSample, t: f64| s.values().iter().filter(|v| **v <= t).count() as f64 / s.len() as f64;
        let brute = a
            .values()
            .iter()
            .chain(b.values())
            .map(|&t| (cdf(&a, t) - cdf(&b, t)).abs())
            .fold(0.0, f64::max);
        assert!((ks_distance(&a, &b) - brute).abs() < 1e-15);
    }

    #[test]
    fn eo_gap_on_gaussian_mean_is_half_chi2() {
        let p = problem_by_id("gaussian-mean").unwrap();
        let g = gap_distribution(&p, &ProcedureSpec::eo(), 50, 4000, 7).unwrap();
        assert!(g.failures.is_empty());
        let limit = sample_limit_law(&identity_params(&[0.0, 0.0], 0.0), 4000, 8).unwrap();
        assert!(ks_distance(&g.scaled().unwrap(), &limit.sample) <= 0.05);
    }

    #[test]
    fn eo_expansion_is_exact() {
        let p = problem_by_id("gaussian-mean").unwrap();
        let fit = expansion_residual_rate(&p, &ProcedureKind::Eo, &[50, 100, 200], &LambdaRule::Constant { c: 0.0 }, 20, 1).unwrap();
        assert!(fit.rows.iter().all(|r| r.mean_residual < 1e-13));
        assert!(fit.to_csv().starts_with("n,lambda,mean_residual,se\n"));
        assert!(expansion_residual_rate(&p, &ProcedureKind::Eo, &[50, 100], &LambdaRule::Constant { c: 0.0 }, 20, 1).is_err());
    }

    #[test]
    fn ridge_expansion_rate() {
        let p = problem_by_id("shifted-gaussian-mean").unwrap();
        let kind = ProcedureKind::Regularized { penalty: Penalty::Ridge };
        let fit = expansion_residual_rate(&p, &kind, &[250, 1000, 4000], &LambdaRule::AOverSqrtN { a: 1.0 }, 200, 2).unwrap();
        assert!(fit.slope.unwrap() >= 1.5, "{fit:?}");
    }

    #[test]
    fn gap_bias_at_zero_and_scaling() {
        let p = problem_by_id("shifted-gaussian-mean").unwrap();
        let zero = expected_gap_bias(&p, &ProcedureSpec::ridge(0.0), 100, 50, 3).unwrap();
        assert_eq!(zero.observed, 0.0);
        let a = expected_gap_bias(&p, &ProcedureSpec::ridge(0.05), 100, 4, 3).unwrap();
        let b = expected_gap_bias(&p, &ProcedureSpec::ridge(0.1), 100, 4, 3).unwrap();
        assert!((b.predicted / a.predicted - 4.0).abs() < 1e-12);
        assert!((a.predicted - 1.25e-3).abs() < 1e-15);
        let eo = problem_by_id("gaussian-mean").unwrap();
        assert!(matches!(
            expected_gap_bias(&eo, &ProcedureSpec::ridge(0.1), 100, 4, 3),
            Err(Error::DegenerateBias(_))
        ));
    }

    #[test]
    fn cramer_rao() {
        let p = problem_by_id("gaussian-mle").unwrap();
        assert!((cramer_rao_trace(&p).unwrap() - 2.0).abs() < 1e-12);
        assert!((cramer_rao_trace_monte_carlo(&p, 200_000, 1).unwrap() - 2.0).abs() < 3e-2);
        let g = problem_by_id("gaussian-mean").unwrap();
        assert!((cramer_rao_trace(&g).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn worst_case_expansion_shrinks() {
        let p = problem_by_id("exp-quadratic").unwrap();
        let data = sample_dataset(&p, 1000, 2);
        let losses: Vec<f64> = data.iter().map(|xi| p.program().loss(&[1.0], xi)).collect();
        let lambdas = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
        let r = worst_case_expansion_residuals(&losses, &PhiDivergence::kl(), &lambdas).unwrap();
        let (x, y): (Vec<f64>, Vec<f64>) = r.into_iter().unzip();
        assert!(loglog_slope(&x, &y).unwrap() >= 0.75, "{y:?}");
        // chi2 with interior weights: the expansion has no remainder.
        let r = worst_case_expansion_residuals(&losses, &PhiDivergence::chi2(), &lambdas).unwrap();
        assert!(r.iter().all(|(_, e)| *e < 1e-12), "{r:?}");
    }

    #[test]
    fn ldro_check_at_zero_and_sign() {
        let p = problem_by_id("exp-quadratic").unwrap();
        let data = sample_dataset(&p, 2000, 4);
        let check = ldro_bias_variance_check(&p, &data, &PhiDivergence::kl(), &[0.0, 0.01, 0.02]).unwrap();
        assert_eq!(check.rows[0].mean_change, 0.0);
        assert_eq!(check.rows[0].variance_change, 0.0);
        for r in &check.rows {
            assert!(r.mean_change >= -4.0 * r.mean_se);
        }
        assert!(check.variance_slope < 0.0);
    }

    #[test]
    fn dro_bias_slope_sign_matches_certificate() {
        let p = problem_by_id("exp-quadratic").unwrap();
        let data = sample_dataset(&p, 20_000, 9);
        let kind = ProcedureKind::DroDivergence { divergence: DivergenceId::Chi2 };
        let slope = bias_slope(&p, &data, &kind, &[1e-3, 3e-4, 1e-4]).unwrap();
        let k = p.certificate().bias_vector(&ProcedureSpec::new(kind, 0.0)).unwrap().k;
        assert!((slope[0] - k[0]).abs() < 0.2 * k[0].abs(), "{slope:?} vs {k:?}");
    }
}
