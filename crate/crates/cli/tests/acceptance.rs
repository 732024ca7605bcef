//! Acceptance criteria, one PASS/FAIL line each. Tolerances, sizes and
//! runtime budgets are pinned below and are never relaxed to make a line
//! pass; a failing line means the stated target is not met by this
//! implementation, and the reason is written next to it.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use eolab::asymptotics::{
    bias_slope, cramer_rao_trace, cramer_rao_trace_monte_carlo, expansion_residual_rate,
    expected_gap_bias, gap_distribution, ks_distance, loglog_slope, procedure_distance_rate,
    sample_limit_law, worst_case_expansion_residuals, LambdaRule, LimitLawParams,
};
use eolab::divergence::{verify_conjugate_identities, DivergenceId, PhiDivergence};
use eolab::dominance::{icx_dominates, mps_check, DominancePolicy, EmpiricalSample, Verdict};
use eolab::harness::estimate_disappointment;
use eolab::model::{problem_by_id, sample_dataset};
use eolab::solvers::{Penalty, PosteriorMethod, ProcedureKind, ProcedureSpec};
use eolab::Result;
use nalgebra::{DMatrix, DVector};

// 1
const CONJUGATE_TOL: f64 = 1e-8;
// 2
const EO_N: usize = 2000;
const EO_REPS: usize = 10_000;
const EO_MEAN_TOL: f64 = 0.05;
const EO_KS_TOL: f64 = 0.03;
// 3
const TRI_REPS: usize = 10_000;
const TRI_GRID: [usize; 4] = [250, 1000, 4000, 16_000];
const TRI_CASE1_N: usize = 4000;
const TRI_KS_TOL: f64 = 0.05;
const TRI_SE_Z: f64 = 4.0;
const TRI_BLOW_UP: f64 = 1.5;
// 4, 5
const LIMIT_DRAWS: usize = 100_000;
const MPS_BINS: usize = 10;
const MPS_Z: f64 = 3.0;
// 6
const RATE_REPS: usize = 2000;
const RATE_SLOPE: f64 = 1.5;
// 7
const DRO_N: usize = 100_000;
const DRO_LAMBDAS: [f64; 5] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
const DRO_REL_TOL: f64 = 0.15;
const DRO_TARGET_KL: f64 = -0.7071;
const DRO_TARGET_CHI2: f64 = -0.5;
// 8
const EXPANSION_N: usize = 1000;
const EXPANSION_SLOPE: f64 = 0.75;
// 9
const BIAS_LAMBDA: f64 = 0.05;
const BIAS_N: usize = 4000;
const BIAS_REPS: usize = 10_000;
const BIAS_TARGET: f64 = 1.25e-3;
// 10
const CR_EXACT_TOL: f64 = 1e-12;
const CR_DRAWS: usize = 1_000_000;
const CR_MC_TOL: f64 = 1e-2;
// 11
const BAYES_REPS: usize = 500;
const BAYES_SLOPE: f64 = 1.0;
// 12
const SPHERE_N: usize = 4000;
const SPHERE_REPS: usize = 10_000;
// 13
const DISAPPOINT_N: usize = 100;
const DISAPPOINT_REPS: usize = 4000;
const DISAPPOINT_LAMBDAS: [f64; 4] = [0.0, 1e-3, 1e-2, 1e-1];
const DISAPPOINT_Z: f64 = 2.0;

const SEED: u64 = 7_041_993;

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { ok, detail: detail.into() })
}

fn ridge() -> ProcedureKind {
    ProcedureKind::Regularized { penalty: Penalty::Ridge }
}

fn identity_limit(k: &[f64], a: f64) -> Result<LimitLawParams> {
    let d = k.len();
    LimitLawParams::new(DMatrix::identity(d, d), DMatrix::identity(d, d), DVector::from_column_slice(k), a)
}

fn scaled_ridge(rule: &LambdaRule, n: usize) -> Result<EmpiricalSample> {
    let p = problem_by_id("shifted-gaussian-mean")?;
    let spec = ProcedureSpec::new(ridge(), rule.resolve(n));
    let g = gap_distribution(&p, &spec, n, TRI_REPS, SEED)?;
    assert!(g.failures.is_empty(), "{:?}", g.failures.first());
    g.scaled()
}

fn c1() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for div in [PhiDivergence::kl(), PhiDivergence::chi2()] {
        let r = verify_conjugate_identities(&div);
        let m = r.value_at_zero.max(r.slope_residual).max(r.curvature_residual);
        worst = worst.max(m);
        parts.push(format!("{} worst residual {m:.1e}", div.name()));
    }
    outcome(worst < CONJUGATE_TOL, format!("{} (tol {CONJUGATE_TOL:e})", parts.join(", ")))
}

fn c2() -> Result<Outcome> {
    let p = problem_by_id("gaussian-mean")?;
    let g = gap_distribution(&p, &ProcedureSpec::eo(), EO_N, EO_REPS, SEED)?;
    let scaled = g.scaled()?;
    let mean = scaled.summary().mean;
    let limit = sample_limit_law(&identity_limit(&[0.0, 0.0], 0.0)?, EO_REPS, SEED + 1)?.sample;
    let ks = ks_distance(&scaled, &limit);
    outcome(
        (mean - 1.0).abs() <= EO_MEAN_TOL && ks <= EO_KS_TOL,
        format!("mean n*gap {mean:.4} (target 1 +- {EO_MEAN_TOL}), KS to half chi2_2 {ks:.4} (<= {EO_KS_TOL})"),
    )
}

fn c3a() -> Result<Outcome> {
    let a = scaled_ridge(&LambdaRule::Power { gamma: 0.75 }, TRI_CASE1_N)?;
    let b = scaled_ridge(&LambdaRule::Constant { c: 0.0 }, TRI_CASE1_N)?;
    let ks = ks_distance(&a, &b);
    outcome(ks <= TRI_KS_TOL, format!("case 1, n = {TRI_CASE1_N}: KS(lambda_n, 0) {ks:.4} (<= {TRI_KS_TOL})"))
}

fn c3b() -> Result<Outcome> {
    // The finite-n mean is 1.5 / (1 + lambda)^2; at the largest grid point
    // the shortfall is well inside the band.
    let n = TRI_GRID[3];
    let s = scaled_ridge(&LambdaRule::AOverSqrtN { a: 1.0 }, n)?;
    let sum = s.summary();
    let limit = sample_limit_law(&identity_limit(&[-1.0, 0.0], 1.0)?, LIMIT_DRAWS, SEED + 2)?.sample;
    let ks = ks_distance(&s, &limit);
    let z = (sum.mean - 1.5).abs() / sum.standard_error();
    outcome(
        z <= TRI_SE_Z && ks <= TRI_KS_TOL,
        format!("case 3, n = {n}: mean n*gap {:.4} ({z:.2} SE from 1.5, <= {TRI_SE_Z}), KS {ks:.4} (<= {TRI_KS_TOL})", sum.mean),
    )
}

fn c3c() -> Result<Outcome> {
    let rule = LambdaRule::Power { gamma: 0.25 };
    let mut medians = Vec::new();
    let mut last = None;
    for &n in &TRI_GRID {
        let s = scaled_ridge(&rule, n)?;
        medians.push(s.median());
        last = Some((n, s));
    }
    let (n, s) = last.expect("grid is nonempty");
    let lambda = rule.resolve(n);
    // n * gap / (n lambda^2) = gap / lambda^2.
    let rescaled = s.scaled(1.0 / (n as f64 * lambda * lambda), "gap / lambda^2")?;
    let sum = rescaled.summary();
    let z = (sum.mean - 0.5).abs() / sum.standard_error();
    let growth = medians.windows(2).map(|w| w[1] / w[0]).fold(f64::INFINITY, f64::min);
    let exact = (1.0 / (n as f64 * lambda * lambda) + 0.5) / (1.0 + lambda).powi(2);
    outcome(
        z <= TRI_SE_Z && growth >= TRI_BLOW_UP,
        format!(
            "case 2, n = {n}: mean gap/lambda^2 {:.4} ({z:.1} SE from 0.5, <= {TRI_SE_Z}; exact finite-n value {exact:.4}, \
             ridge shrinks by 1/(1+lambda)^2 with lambda = {lambda:.3}), smallest median ratio {growth:.2} (>= {TRI_BLOW_UP})",
            sum.mean
        ),
    )
}

fn c4() -> Result<Outcome> {
    let eo = sample_limit_law(&identity_limit(&[-1.0, 0.0], 0.0)?, LIMIT_DRAWS, SEED + 3)?.sample;
    let balanced = sample_limit_law(&identity_limit(&[-1.0, 0.0], 1.0)?, LIMIT_DRAWS, SEED + 4)?.sample;
    let policy = DominancePolicy::default();
    let forward = icx_dominates(&eo, &balanced, &policy);
    let reverse = icx_dominates(&balanced, &eo, &policy);
    outcome(
        forward.verdict == Verdict::Dominated
            && forward.violations_beyond_band == 0
            && reverse.verdict == Verdict::NotDominated,
        format!(
            "EO limit vs case 3 limit: {} ({} violations beyond {}*SE), reverse: {}",
            forward.verdict.as_str(),
            forward.violations_beyond_band,
            policy.z,
            reverse.verdict.as_str()
        ),
    )
}

fn c5() -> Result<Outcome> {
    let s = sample_limit_law(&identity_limit(&[-1.0, 0.0], 1.0)?, LIMIT_DRAWS, SEED + 5)?;
    let base = EmpiricalSample::new("base", s.base.clone())?;
    let report = mps_check(&base, s.shift, &s.noise, MPS_BINS)?;
    let worst = report
        .bins
        .iter()
        .map(|b| b.mean.abs() / b.standard_error)
        .fold(0.0, f64::max);
    outcome(
        report.passes(MPS_Z),
        format!("{} bins, largest |bin mean| / SE {worst:.2} (<= {MPS_Z})", report.bins.len()),
    )
}

fn c6() -> Result<Outcome> {
    let p = problem_by_id("shifted-gaussian-mean")?;
    let fit = expansion_residual_rate(&p, &ridge(), &TRI_GRID, &LambdaRule::AOverSqrtN { a: 1.0 }, RATE_REPS, SEED)?;
    let slope = fit.slope.unwrap_or(f64::NAN);
    outcome(slope >= RATE_SLOPE, format!("residual log-log slope {slope:.3} (>= {RATE_SLOPE})"))
}

fn c7() -> Result<Outcome> {
    let p = problem_by_id("exp-quadratic")?;
    let data = sample_dataset(&p, DRO_N, SEED);
    let mut ok = true;
    let mut parts = Vec::new();
    for (id, target) in [(DivergenceId::Kl, DRO_TARGET_KL), (DivergenceId::Chi2, DRO_TARGET_CHI2)] {
        let kind = ProcedureKind::DroDivergence { divergence: id };
        let slope = bias_slope(&p, &data, &kind, &DRO_LAMBDAS)?[0];
        let k = p.certificate().bias_vector(&ProcedureSpec::new(kind, 0.0))?.k[0];
        ok &= (slope - target).abs() <= DRO_REL_TOL * target.abs();
        parts.push(format!("{id} slope {slope:+.4} vs target {target:+.4} (certificate K {k:+.4})"));
    }
    outcome(
        ok,
        format!(
            "{}; the worst case tilts toward large losses, so the shift is sqrt(2 phi*''(0) / Var h) * Cov(h, h') > 0",
            parts.join(", ")
        ),
    )
}

fn c8() -> Result<Outcome> {
    let p = problem_by_id("exp-quadratic")?;
    let data = sample_dataset(&p, EXPANSION_N, SEED);
    let x = &p.certificate().optimum;
    let losses: Vec<f64> = data.iter().map(|xi| p.program().loss(x, xi)).collect();
    let lambdas = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
    let (l, e): (Vec<f64>, Vec<f64>) = worst_case_expansion_residuals(&losses, &PhiDivergence::kl(), &lambdas)?
        .into_iter()
        .unzip();
    let slope = loglog_slope(&l, &e).unwrap_or(f64::NAN);
    let chi2 = worst_case_expansion_residuals(&losses, &PhiDivergence::chi2(), &lambdas)?
        .iter()
        .map(|(_, r)| *r)
        .fold(0.0, f64::max);
    outcome(
        slope >= EXPANSION_SLOPE,
        format!(
            "kl residual slope {slope:.3} (>= {EXPANSION_SLOPE}); chi2 residual {chi2:.1e}, the expansion is exact for chi2 while weights stay interior"
        ),
    )
}

fn c9() -> Result<Outcome> {
    let p = problem_by_id("shifted-gaussian-mean")?;
    let b = expected_gap_bias(&p, &ProcedureSpec::ridge(BIAS_LAMBDA), BIAS_N, BIAS_REPS, SEED)?;
    let z = (b.observed - BIAS_TARGET).abs() / b.se;
    // E[gap] for ridge here is (2/n + lambda^2) / (2 (1 + lambda)^2).
    let n = BIAS_N as f64;
    let exact = (2.0 / n + BIAS_LAMBDA.powi(2)) / (2.0 * (1.0 + BIAS_LAMBDA).powi(2)) - 1.0 / n;
    outcome(
        z <= TRI_SE_Z,
        format!(
            "observed {:.4e} +- {:.1e}, {z:.1} SE from {BIAS_TARGET:e} (<= {TRI_SE_Z}); exact finite-lambda value {exact:.4e}, \
             the O(lambda^3) shrinkage term is not negligible at lambda = {BIAS_LAMBDA}",
            b.observed, b.se
        ),
    )
}

fn c10() -> Result<Outcome> {
    let p = problem_by_id("gaussian-mle")?;
    let exact = cramer_rao_trace(&p)?;
    let mc = cramer_rao_trace_monte_carlo(&p, CR_DRAWS, SEED)?;
    outcome(
        (exact - 2.0).abs() <= CR_EXACT_TOL && (mc - 2.0).abs() <= CR_MC_TOL,
        format!("closed form {exact}, Monte Carlo {mc:.5} (within {CR_MC_TOL})"),
    )
}

fn c11() -> Result<Outcome> {
    let p = problem_by_id("gaussian-parametric")?;
    let bayes = ProcedureKind::Bayesian {
        penalty: Some(Penalty::Ridge),
        posterior: PosteriorMethod::ClosedForm,
    };
    let fit = procedure_distance_rate(&p, &bayes, &ridge(), &TRI_GRID, &LambdaRule::AOverSqrtN { a: 1.0 }, BAYES_REPS, SEED)?;
    let slope = fit.slope.unwrap_or(f64::NAN);
    outcome(
        slope >= BAYES_SLOPE,
        format!("|x_bayes - x_reg| slope {slope:.3} against 1/sqrt(n) + lambda (>= {BAYES_SLOPE})"),
    )
}

fn c12() -> Result<Outcome> {
    let p = problem_by_id("sphere-constrained-gaussian")?;
    let g = gap_distribution(&p, &ProcedureSpec::new(ProcedureKind::ConstrainedEo, 0.0), SPHERE_N, SPHERE_REPS, SEED)?;
    let params = LimitLawParams::from_certificate(&p, &ProcedureKind::ConstrainedEo, 0.0)?;
    let limit = sample_limit_law(&params, LIMIT_DRAWS, SEED + 6)?.sample;
    let ks = ks_distance(&g.scaled()?, &limit);
    outcome(
        ks <= TRI_KS_TOL && g.failures.is_empty(),
        format!("KS {ks:.4} (<= {TRI_KS_TOL}) at n = {SPHERE_N}, {} failures", g.failures.len()),
    )
}

fn c13() -> Result<Outcome> {
    let p = problem_by_id("logistic-1d")?;
    let est = DISAPPOINT_LAMBDAS
        .iter()
        .map(|&l| estimate_disappointment(&p, DivergenceId::Chi2, l, DISAPPOINT_N, DISAPPOINT_REPS, SEED))
        .collect::<Result<Vec<_>>>()?;
    let monotone = est
        .windows(2)
        .all(|w| w[1].estimate <= w[0].estimate + DISAPPOINT_Z * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt());
    let list: Vec<String> = DISAPPOINT_LAMBDAS
        .iter()
        .zip(&est)
        .map(|(l, e)| format!("{l:e}: {:.4}", e.estimate))
        .collect();
    outcome(
        monotone && est[0].estimate > 0.0,
        format!("disappointment by lambda {{{}}}", list.join(", ")),
    )
}

fn c14() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/ridge-trichotomy.json");
    let mut outputs = Vec::new();
    for jobs in ["1", "8"] {
        for format in ["csv", "json"] {
            let out = dir.path().join(format!("jobs{jobs}.{format}"));
            let status = Command::new(env!("CARGO_BIN_EXE_eolab"))
                .arg("run")
                .arg(&config)
                .args(["--seed", "42", "--jobs", jobs, "--format", format, "--out"])
                .arg(&out)
                .stdout(std::process::Stdio::null())
                .status()?;
            if !status.success() {
                return outcome(false, format!("run --jobs {jobs} --format {format} exited with {status}"));
            }
            outputs.push(std::fs::read(&out)?);
        }
    }
    let ok = outputs[0] == outputs[2] && outputs[1] == outputs[3];
    outcome(ok, format!("csv {} bytes, json {} bytes, --jobs 1 vs 8", outputs[0].len(), outputs[1].len()))
}

type Criterion = (&'static str, &'static str, Duration, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 16] = [
        ("1", "conjugate identities", secs(1), c1),
        ("2", "EO limit law", secs(60), c2),
        ("3a", "trichotomy case 1", secs(300), c3a),
        ("3b", "trichotomy case 3", secs(300), c3b),
        ("3c", "trichotomy case 2", secs(300), c3c),
        ("4", "limit-law dominance", secs(10), c4),
        ("5", "mean-preserving spread", secs(10), c5),
        ("6", "ridge expansion rate", secs(300), c6),
        ("7", "DRO bias slope", secs(600), c7),
        ("8", "worst-case expansion", secs(60), c8),
        ("9", "expected gap shift", secs(120), c9),
        ("10", "Cramer-Rao trace", Duration::MAX, c10),
        ("11", "Bayesian vs regularized", secs(180), c11),
        ("12", "constrained limit law", secs(180), c12),
        ("13", "disappointment", Duration::MAX, c13),
        ("14", "determinism across --jobs", Duration::MAX, c14),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(o) => (o.ok, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = elapsed <= budget;
        let pass = ok && in_time;
        let timing = if budget == Duration::MAX {
            format!("{:.1}s", elapsed.as_secs_f64())
        } else {
            format!("{:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs())
        };
        println!("{} [{id}] {name}: {detail} [{timing}]", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
