use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eolab::asymptotics::{sample_limit_law, LimitLawParams};
use eolab::divergence::DivergenceId;
use eolab::dominance::icx_dominates;
use eolab::model::{problem_by_id, sample_dataset};
use eolab::solvers::{solve, worst_case_expectation, ProcedureKind, ProcedureSpec};
use eolab::{DominancePolicy, PhiDivergence};

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    let cases = [
        ("exp-quadratic", ProcedureSpec::eo()),
        ("exp-quadratic", ProcedureSpec::dro(DivergenceId::Kl, 1e-3)),
        ("exp-quadratic", ProcedureSpec::dro(DivergenceId::Chi2, 1e-3)),
        ("exp-quadratic", ProcedureSpec::new(ProcedureKind::DroLagrangian { divergence: DivergenceId::Kl }, 1e-2)),
        ("shifted-gaussian-mean", ProcedureSpec::ridge(0.05)),
        ("logistic-1d", ProcedureSpec::new(ProcedureKind::DroWasserstein1, 0.05)),
        ("logistic-1d", ProcedureSpec::dro(DivergenceId::Chi2, 1e-2)),
        ("sphere-constrained-gaussian", ProcedureSpec::new(ProcedureKind::ConstrainedEo, 0.0)),
    ];
    for n in [1000, 10_000] {
        for (id, spec) in &cases {
            let problem = problem_by_id(id).unwrap();
            let data = sample_dataset(&problem, n, 1);
            let name = format!("{id}/{}", spec.label());
            group.bench_with_input(BenchmarkId::new(name, n), &data, |b, data| {
                b.iter(|| solve(&problem, black_box(data), spec).unwrap())
            });
        }
    }
    group.finish();
}

fn worst_case(c: &mut Criterion) {
    let problem = problem_by_id("exp-quadratic").unwrap();
    let data = sample_dataset(&problem, 10_000, 2);
    let losses: Vec<f64> = data.iter().map(|xi| problem.program().loss(&[1.0], xi)).collect();
    let mut group = c.benchmark_group("worst_case_expectation");
    for div in [PhiDivergence::kl(), PhiDivergence::chi2()] {
        group.bench_function(div.name().to_string(), |b| {
            b.iter(|| worst_case_expectation(black_box(&losses), &div, 1e-2).unwrap())
        });
    }
    group.finish();
}

fn limit_law_and_dominance(c: &mut Criterion) {
    let problem = problem_by_id("shifted-gaussian-mean").unwrap();
    let kind = ProcedureKind::Regularized { penalty: Default::default() };
    let params = LimitLawParams::from_certificate(&problem, &kind, 1.0).unwrap();
    c.bench_function("sample_limit_law/100000", |b| {
        b.iter(|| sample_limit_law(black_box(&params), 100_000, 3).unwrap())
    });
    let a = sample_limit_law(&params.with_a(0.0), 100_000, 4).unwrap().sample;
    let b = sample_limit_law(&params, 100_000, 5).unwrap().sample;
    let policy = DominancePolicy::default();
    c.bench_function("icx_dominates/100000", |bench| {
        bench.iter(|| icx_dominates(black_box(&a), black_box(&b), &policy))
    });
}

criterion_group!(benches, solvers, worst_case, limit_law_and_dominance);
criterion_main!(benches);
