//! Declarative experiments: every procedure at every sample size, on
//! datasets shared across procedures, summarized against EO and the limit
//! theory.

mod config;
mod report;

pub use config::{
    ExperimentConfig, OutputFormat, OutputSpec, ProcedureEntry, DEFAULT_N_GRID, DEFAULT_REPLICATIONS,
};
pub use report::{read_report, render_csv, write_report, CSV_HEADER};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    gap_distribution, ks_distance, sample_limit_law, trichotomy_case, GapDistribution, LambdaRule,
    LimitLawParams, ReplicationFailure, ReplicationRecord, TrichotomyCase,
};
use crate::divergence::{DivergenceId, PhiDivergence};
use crate::dominance::{icx_dominates, DominanceVerdict, EmpiricalSample, Summary};
use crate::error::{Error, Result};
use crate::model::{problem_by_id, sample_dataset, ProblemSpec};
use crate::rng::{derive_seed, replication_seed};
use crate::solvers::{solve_dro_divergence, solve_eo, ProcedureKind, ProcedureSpec};

pub const REPORT_SCHEMA: &str = "eolab.report/v1";
/// Largest tolerated fraction of failed replications in a cell.
pub const FAILURE_BUDGET: f64 = 0.01;
/// Successive median ratio of `n G` that flags a blow-up.
pub const BLOW_UP_RATIO: f64 = 1.5;

/// Probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    pub replications: usize,
}

impl Estimate {
    fn of(hits: usize, total: usize) -> Self {
        let p = hits as f64 / total as f64;
        Estimate {
            estimate: p,
            se: (p * (1.0 - p) / total as f64).sqrt(),
            replications: total,
        }
    }
}

/// `Z(x_hat)` above the in-sample objective. Ties happen (at a flat point
/// both equal `h(x0, .)`), so rounding noise is not counted.
pub fn disappointed(true_objective: f64, in_sample: f64) -> bool {
    true_objective > in_sample + 1e-12 * (1.0 + in_sample.abs())
}

/// EO against a procedure in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominancePair {
    /// Is EO's scaled gap dominated by the procedure's?
    pub eo_vs_procedure: DominanceVerdict,
    pub procedure_vs_eo: DominanceVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub procedure: String,
    pub spec: ProcedureSpec,
    pub n: usize,
    pub lambda: f64,
    /// 1, 2 or 3; see [`TrichotomyCase`].
    pub case: u8,
    /// Summary of `n G`.
    pub summary: Summary,
    pub mean_gap: f64,
    pub mean_scaled_gap: f64,
    pub variance_scaled_gap: f64,
    pub median_scaled_gap: f64,
    /// `E|x_hat - x*|^2`.
    pub mse: f64,
    /// KS distance of `n G` to the limit law; `None` in case 2 or when the
    /// certificate lacks the bias.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_to_limit: Option<f64>,
    /// `E[lambda^-2 G]` (with the effective `lambda`) in case 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_scaled_mean_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominance: Option<DominancePair>,
    /// Fraction of runs with true objective above the in-sample one (EO
    /// and divergence DRO only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disappointment: Option<Estimate>,
    pub nonconverged: usize,
    pub failures: Vec<ReplicationFailure>,
    pub records: Vec<ReplicationRecord>,
}

/// Case-2 diagnostics: the median of `n G` across the n-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingDiagnostic {
    pub procedure: String,
    pub medians: Vec<f64>,
    pub ratios: Vec<f64>,
    pub blow_up: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub problem: String,
    pub cells: Vec<CellReport>,
    pub scaling: Vec<ScalingDiagnostic>,
}

impl Report {
    pub fn cell(&self, procedure: &str, n: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.procedure == procedure && c.n == n)
    }

    pub fn summary_lines(&self, raw: bool) -> Vec<String> {
        self.cells
            .iter()
            .map(|c| {
                let unit = if raw { 1.0 } else { c.n as f64 };
                let verdict = c.dominance.as_ref().map_or("-".to_string(), |d| {
                    format!(
                        "{}/{}",
                        d.eo_vs_procedure.verdict.as_str(),
                        d.procedure_vs_eo.verdict.as_str()
                    )
                });
                format!(
                    "{} n={} lambda={:.6e} case={} mean_{}={:.6} failures={} nonconverged={} eo_vs_procedure/reverse={}",
                    c.procedure,
                    c.n,
                    c.lambda,
                    c.case,
                    if raw { "gap" } else { "scaled_gap" },
                    c.mean_gap * unit,
                    c.failures.len(),
                    c.nonconverged,
                    verdict
                )
            })
            .collect()
    }
}

fn is_eo(kind: &ProcedureKind) -> bool {
    matches!(kind, ProcedureKind::Eo | ProcedureKind::ConstrainedEo)
}

/// `lim sqrt(n) lambda_eff(n)`. Divergence DRO moves on `sqrt(lambda)`, so
/// its rule exponent halves.
pub fn effective_limit_a(kind: &ProcedureKind, rule: &LambdaRule) -> f64 {
    if is_eo(kind) {
        return 0.0;
    }
    match (kind, *rule) {
        (ProcedureKind::DroDivergence { .. }, LambdaRule::Constant { c }) if c == 0.0 => 0.0,
        (ProcedureKind::DroDivergence { .. }, LambdaRule::Constant { .. }) => f64::INFINITY,
        (ProcedureKind::DroDivergence { .. }, LambdaRule::AOverSqrtN { a }) if a == 0.0 => 0.0,
        (ProcedureKind::DroDivergence { .. }, LambdaRule::AOverSqrtN { .. }) => f64::INFINITY,
        (ProcedureKind::DroDivergence { .. }, LambdaRule::Power { gamma }) => {
            LambdaRule::Power { gamma: gamma / 2.0 }.limit_a()
        }
        (_, r) => r.limit_a(),
    }
}

fn check_budget(dist: &GapDistribution, label: &str) -> Result<()> {
    let failures = dist.failures.len();
    if failures as f64 > FAILURE_BUDGET * dist.replications() as f64 {
        return Err(Error::FailureBudget {
            procedure: label.to_string(),
            n: dist.n,
            failures,
            replications: dist.replications(),
        });
    }
    if dist.records.is_empty() {
        return Err(Error::Sample(format!("({label}, n={}) has no successful replication", dist.n)));
    }
    Ok(())
}

fn limit_ks(
    problem: &ProblemSpec,
    kind: &ProcedureKind,
    a: f64,
    sample: &EmpiricalSample,
    seed: u64,
) -> Option<f64> {
    if a.is_infinite() {
        return None;
    }
    let params = LimitLawParams::from_certificate(problem, kind, a).ok()?;
    let limit = sample_limit_law(&params, sample.len(), seed).ok()?;
    Some(ks_distance(sample, &limit.sample))
}

fn degenerate(problem: &ProblemSpec, kind: &ProcedureKind) -> bool {
    problem
        .certificate()
        .bias_vector(&ProcedureSpec::new(kind.clone(), 0.0))
        .map_or(true, |b| b.degenerate)
}

/// Runs every (procedure, n) cell on the global thread pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let problem = problem_by_id(&config.problem)?;
    let r = config.replications;
    let mut cells = Vec::new();
    let mut eo_samples: Vec<Option<EmpiricalSample>> = vec![None; config.n_grid.len()];
    // EO first so every other cell can be compared against it.
    let mut order: Vec<&ProcedureEntry> = config.procedures.iter().filter(|p| is_eo(&p.kind)).collect();
    order.extend(config.procedures.iter().filter(|p| !is_eo(&p.kind)));
    for entry in order {
        let label = entry.label();
        let rule = entry.rule(&config.lambda);
        let a = effective_limit_a(&entry.kind, rule);
        let case = trichotomy_case(a);
        for (gi, &n) in config.n_grid.iter().enumerate() {
            let lambda = if is_eo(&entry.kind) { 0.0 } else { rule.resolve(n) };
            let spec = ProcedureSpec::new(entry.kind.clone(), lambda);
            let dist = gap_distribution(&problem, &spec, n, r, config.seed)?;
            check_budget(&dist, &label)?;
            let scaled = dist.scaled()?;
            let summary = *scaled.summary();
            let m = dist.records.len() as f64;
            let lambda_eff = spec.effective_lambda();
            let limit_seed = derive_seed(config.seed, &[n as u64, 0x4c49_4d49_54]);
            let dominance = match (&eo_samples[gi], is_eo(&entry.kind), case) {
                (Some(eo), false, TrichotomyCase::Vanishing | TrichotomyCase::Balanced) => {
                    let mut fwd = icx_dominates(eo, &scaled, &config.dominance);
                    let mut rev = icx_dominates(&scaled, eo, &config.dominance);
                    if degenerate(&problem, &entry.kind) {
                        fwd = fwd.mark_inconclusive("bias curvature K'HK is degenerate");
                        rev = rev.mark_inconclusive("bias curvature K'HK is degenerate");
                    }
                    Some(DominancePair {
                        eo_vs_procedure: fwd,
                        procedure_vs_eo: rev,
                    })
                }
                _ => None,
            };
            let disappointment = match &entry.kind {
                ProcedureKind::Eo | ProcedureKind::DroDivergence { .. } => {
                    let hits = dist
                        .records
                        .iter()
                        .filter(|rec| disappointed(problem.certificate().optimal_value + rec.gap, rec.objective))
                        .count();
                    Some(Estimate::of(hits, dist.records.len()))
                }
                _ => None,
            };
            cells.push(CellReport {
                procedure: label.clone(),
                spec: spec.clone(),
                n,
                lambda,
                case: case.id(),
                summary,
                mean_gap: dist.records.iter().map(|x| x.gap).sum::<f64>() / m,
                mean_scaled_gap: summary.mean,
                variance_scaled_gap: summary.variance,
                median_scaled_gap: scaled.median(),
                mse: dist.records.iter().map(|x| x.sq_error).sum::<f64>() / m,
                ks_to_limit: limit_ks(&problem, &entry.kind, a, &scaled, limit_seed),
                lambda_scaled_mean_gap: (case == TrichotomyCase::Exploding && lambda_eff > 0.0).then(|| {
                    dist.records.iter().map(|x| x.gap).sum::<f64>() / (m * lambda_eff * lambda_eff)
                }),
                dominance,
                disappointment,
                nonconverged: dist.records.iter().filter(|x| !x.converged).count(),
                failures: dist.failures.clone(),
                records: dist.records.clone(),
            });
            if is_eo(&entry.kind) && eo_samples[gi].is_none() {
                eo_samples[gi] = Some(scaled);
            }
        }
    }
    // Restore config order: procedures as listed, n ascending.
    let rank = |label: &str| config.procedures.iter().position(|p| p.label() == label).unwrap_or(usize::MAX);
    cells.sort_by_key(|c| (rank(&c.procedure), c.n));
    let scaling = config
        .procedures
        .iter()
        .map(|p| {
            let label = p.label();
            let medians: Vec<f64> = cells
                .iter()
                .filter(|c| c.procedure == label)
                .map(|c| c.median_scaled_gap)
                .collect();
            let ratios: Vec<f64> = medians.windows(2).map(|w| w[1] / w[0]).collect();
            ScalingDiagnostic {
                procedure: label,
                blow_up: !ratios.is_empty() && ratios.iter().all(|r| *r >= BLOW_UP_RATIO),
                medians,
                ratios,
            }
        })
        .collect();
    Ok(Report {
        schema: REPORT_SCHEMA.to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        problem: problem.id().to_string(),
        cells,
        scaling,
    })
}

/// `run_experiment` on a dedicated pool of `jobs` workers. Output does not
/// depend on `jobs`.
pub fn run_experiment_with_jobs(config: &ExperimentConfig, jobs: usize) -> Result<Report> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(config))
}

/// Frequency of `Z(x_hat) > sup_{D(Q, P_n) <= lambda} E_Q[h(x_hat)]` at the
/// divergence-DRO solution; `lambda = 0` is EO against its in-sample mean.
pub fn estimate_disappointment(
    problem: &ProblemSpec,
    divergence: DivergenceId,
    lambda: f64,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Estimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda}")));
    }
    if replications == 0 || n == 0 {
        return Err(Error::InvalidArgument("n and replications must be positive".into()));
    }
    let div = PhiDivergence::from_id(divergence);
    let outcomes: Vec<Option<bool>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let data = sample_dataset(problem, n, replication_seed(seed, n, rep));
            let sol = if lambda == 0.0 {
                solve_eo(problem, &data)
            } else {
                solve_dro_divergence(problem, &data, &div, lambda)
            };
            sol.ok().map(|s| disappointed(problem.program().true_objective(&s.x), s.objective))
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures as f64 > FAILURE_BUDGET * replications as f64 {
        return Err(Error::FailureBudget {
            procedure: format!("dro-{divergence}"),
            n,
            failures,
            replications,
        });
    }
    let ok = replications - failures;
    let hits = outcomes.iter().filter(|o| **o == Some(true)).count();
    Ok(Estimate::of(hits, ok))
}
