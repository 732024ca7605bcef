//! Invariant suites behind `eolab verify`.

use std::process::ExitCode;

use eolab::asymptotics::{
    expansion_residual_rate, gap_distribution, ks_distance, loglog_slope, sample_limit_law,
    worst_case_expansion_residuals, LambdaRule, LimitLawParams,
};
use eolab::divergence::{verify_conjugate_identities, PhiDivergence, IDENTITY_TOLERANCE};
use eolab::dominance::{icx_dominates, mps_check, DominancePolicy, EmpiricalSample, Verdict};
use eolab::model::{
    catalog_ids, check_derivatives, problem_by_id, sample_dataset, ProblemSpec, GRADIENT_FD_TOLERANCE,
    HESSIAN_FD_TOLERANCE,
};
use eolab::solvers::{Penalty, ProcedureKind, ProcedureSpec};
use eolab::Result;

use crate::Suite;

const SEED: u64 = 20_240_601;
const LIMIT_REPS: usize = 2000;
const LIMIT_GRID: [usize; 3] = [250, 1000, 4000];
const LIMIT_DRAWS: usize = 100_000;
const KS_TOLERANCE: f64 = 0.05;

struct Checks {
    failed: usize,
}

impl Checks {
    fn record(&mut self, name: &str, ok: bool, detail: impl std::fmt::Display) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    /// A check whose computation itself may fail.
    fn attempt(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String)>) {
        match f() {
            Ok((ok, detail)) => self.record(name, ok, detail),
            Err(e) => self.record(name, false, format!("error: {e}")),
        }
    }
}

pub fn run(suite: Suite, problem: Option<&str>) -> ExitCode {
    let ids: Vec<&str> = match (suite, problem) {
        (_, Some(id)) => vec![id],
        (Suite::Gradients, None) => catalog_ids().to_vec(),
        (Suite::Expansions, None) => vec!["exp-quadratic"],
        (Suite::Limits, None) => vec!["shifted-gaussian-mean"],
        (Suite::Conjugates, None) => vec![],
    };
    let mut problems = Vec::new();
    for id in ids {
        match problem_by_id(id) {
            Ok(p) => problems.push(p),
            Err(e) => {
                eprintln!("eolab: {e}");
                return ExitCode::from(2);
            }
        }
    }
    let mut checks = Checks { failed: 0 };
    match suite {
        Suite::Conjugates => conjugates(&mut checks),
        Suite::Gradients => problems.iter().for_each(|p| gradients(&mut checks, p)),
        Suite::Expansions => problems.iter().for_each(|p| expansions(&mut checks, p)),
        Suite::Limits => problems.iter().for_each(|p| limits(&mut checks, p)),
    }
    if checks.failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{} check(s) failed", checks.failed);
        ExitCode::from(1)
    }
}

fn conjugates(c: &mut Checks) {
    for div in [PhiDivergence::kl(), PhiDivergence::chi2()] {
        let r = verify_conjugate_identities(&div);
        let name = div.name();
        c.record(&format!("{name} phi*(0) = 0"), r.value_at_zero < IDENTITY_TOLERANCE, format!("|phi*(0)| = {:.2e}", r.value_at_zero));
        c.record(&format!("{name} phi*'(0) = 1"), r.slope_residual < IDENTITY_TOLERANCE, format!("residual {:.2e}", r.slope_residual));
        c.record(
            &format!("{name} phi*''(0) = 1/phi''(1)"),
            r.curvature_residual < IDENTITY_TOLERANCE,
            format!("phi*''(0) = {:.10}, residual {:.2e}", r.curvature, r.curvature_residual),
        );
    }
}

fn gradients(c: &mut Checks, p: &ProblemSpec) {
    let r = check_derivatives(p, 64, SEED);
    c.record(
        &format!("{} gradient", p.id()),
        r.gradient_error <= GRADIENT_FD_TOLERANCE,
        format!("worst relative error {:.2e} over {} points", r.gradient_error, r.points),
    );
    c.record(
        &format!("{} hessian", p.id()),
        r.hessian_error <= HESSIAN_FD_TOLERANCE,
        format!("worst relative error {:.2e} over {} points", r.hessian_error, r.points),
    );
}

fn ridge() -> ProcedureKind {
    ProcedureKind::Regularized { penalty: Penalty::Ridge }
}

fn expansions(c: &mut Checks, p: &ProblemSpec) {
    let id = p.id();
    let data = sample_dataset(p, 1000, SEED);
    let x = &p.certificate().optimum;
    let losses: Vec<f64> = data.iter().map(|xi| p.program().loss(x, xi)).collect();
    let lambdas = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
    c.attempt(&format!("{id} kl worst-case expansion"), || {
        let r = worst_case_expansion_residuals(&losses, &PhiDivergence::kl(), &lambdas)?;
        let (l, e): (Vec<f64>, Vec<f64>) = r.into_iter().unzip();
        let slope = loglog_slope(&l, &e);
        Ok((slope.is_some_and(|s| s >= 0.75), format!("residual slope {slope:?} (need >= 0.75)")))
    });
    c.attempt(&format!("{id} chi2 worst-case expansion"), || {
        let r = worst_case_expansion_residuals(&losses, &PhiDivergence::chi2(), &lambdas)?;
        let worst = r.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        Ok((worst < 1e-10, format!("largest residual {worst:.2e} (exact while weights stay interior)")))
    });
    c.attempt(&format!("{id} ridge first-order expansion"), || {
        let fit = expansion_residual_rate(p, &ridge(), &LIMIT_GRID, &LambdaRule::AOverSqrtN { a: 1.0 }, 200, SEED)?;
        Ok((fit.slope.is_some_and(|s| s >= 1.5), format!("residual slope {:?} (need >= 1.5)", fit.slope)))
    });
}

fn scaled_sample(p: &ProblemSpec, rule: &LambdaRule, n: usize) -> Result<EmpiricalSample> {
    let spec = ProcedureSpec::new(ridge(), rule.resolve(n));
    gap_distribution(p, &spec, n, LIMIT_REPS, SEED)?.scaled()
}

fn limits(c: &mut Checks, p: &ProblemSpec) {
    let id = p.id();
    let n = *LIMIT_GRID.last().expect("grid is nonempty");
    let eo_rule = LambdaRule::Constant { c: 0.0 };
    c.attempt(&format!("{id} case 1 (lambda = n^-0.75) matches EO"), || {
        let a = scaled_sample(p, &LambdaRule::Power { gamma: 0.75 }, n)?;
        let b = scaled_sample(p, &eo_rule, n)?;
        let ks = ks_distance(&a, &b);
        Ok((ks <= KS_TOLERANCE, format!("KS {ks:.4} at n = {n} (need <= {KS_TOLERANCE})")))
    });
    let params = match LimitLawParams::from_certificate(p, &ridge(), 1.0) {
        Ok(params) => params,
        Err(e) => {
            c.record(&format!("{id} limit law"), false, format!("error: {e}"));
            return;
        }
    };
    c.attempt(&format!("{id} case 3 (lambda = 1/sqrt n) matches its limit law"), || {
        let observed = scaled_sample(p, &LambdaRule::AOverSqrtN { a: 1.0 }, n)?;
        let limit = sample_limit_law(&params, LIMIT_DRAWS, SEED)?.sample;
        let ks = ks_distance(&observed, &limit);
        Ok((ks <= KS_TOLERANCE, format!("KS {ks:.4} at n = {n} (need <= {KS_TOLERANCE})")))
    });
    c.attempt(&format!("{id} case 3 limit dominates EO limit"), || {
        let eo = sample_limit_law(&params.with_a(0.0), LIMIT_DRAWS, SEED)?.sample;
        let balanced = sample_limit_law(&params, LIMIT_DRAWS, SEED + 1)?.sample;
        let policy = DominancePolicy::default();
        let forward = icx_dominates(&eo, &balanced, &policy);
        let reverse = icx_dominates(&balanced, &eo, &policy);
        if params.degenerate() {
            let forward = forward.mark_inconclusive("K'HK is degenerate");
            let reverse = reverse.mark_inconclusive("K'HK is degenerate");
            let ok = forward.verdict == Verdict::Inconclusive && reverse.verdict == Verdict::Inconclusive;
            return Ok((ok, "degenerate K: both directions inconclusive".to_string()));
        }
        let ok = forward.verdict == Verdict::Dominated
            && forward.violations_beyond_band == 0
            && reverse.verdict == Verdict::NotDominated;
        Ok((ok, format!("EO vs case 3: {}, reverse: {}", forward.verdict.as_str(), reverse.verdict.as_str())))
    });
    c.attempt(&format!("{id} case 3 limit is a mean-preserving spread"), || {
        let s = sample_limit_law(&params, LIMIT_DRAWS, SEED)?;
        let base = EmpiricalSample::new("base", s.base.clone())?;
        let report = mps_check(&base, s.shift, &s.noise, 10)?;
        Ok((report.passes(3.0), format!("largest |bin mean| {:.2e}", report.max_abs_mean)))
    });
    c.attempt(&format!("{id} case 2 (lambda = n^-0.25) blows up"), || {
        let blow = LambdaRule::Power { gamma: 0.25 };
        let mut medians = Vec::new();
        let mut eo_medians = Vec::new();
        for &m in &LIMIT_GRID {
            medians.push(scaled_sample(p, &blow, m)?.median());
            eo_medians.push(scaled_sample(p, &eo_rule, m)?.median());
        }
        let growth = medians.windows(2).map(|w| w[1] / w[0]).fold(f64::INFINITY, f64::min);
        let drift = eo_medians
            .windows(2)
            .map(|w| (w[1] / w[0] - 1.0).abs())
            .fold(0.0, f64::max);
        Ok((
            growth >= 1.5 && drift <= 0.1,
            format!("smallest median ratio {growth:.3} (need >= 1.5), EO median drift {drift:.3} (need <= 0.1)"),
        ))
    });
}
