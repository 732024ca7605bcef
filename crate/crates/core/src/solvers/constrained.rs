use nalgebra::{DMatrix, DVector};

use super::eo::Empirical;
use super::{solve_eo, Diagnostics, Solution, SolveError};
use crate::model::{ConstraintSet, Dataset, ProblemSpec, ACTIVITY_THRESHOLD};

const KKT_MAX_ITERATIONS: usize = 200;
const KKT_RESIDUAL_TOLERANCE: f64 = 1e-10;
const FEASIBILITY_TOLERANCE: f64 = 1e-12;

/// Lagrangian Newton on the KKT system of `min E_{P_n}[h]` over the
/// certified binding constraints, treated as equalities.
pub fn solve_constrained_eo(problem: &ProblemSpec, data: &Dataset) -> Result<Solution, SolveError> {
    let Some(set) = problem.constraints().filter(|c| !c.is_empty()) else {
        return solve_eo(problem, data);
    };
    let eo = solve_eo(problem, data)?;
    let x0 = set
        .project(&eo.x)
        .map_err(|e| SolveError::Model(e.to_string()))?;
    let emp = Empirical::plain(problem.program(), data);
    let mut x = DVector::from_vec(x0);
    let (_, g, _) = emp.mean_derivatives(x.as_slice());
    let mut alpha = least_squares_multipliers(set, x.as_slice(), &g);
    let d = x.len();
    let b = set.binding.len();
    for it in 0..KKT_MAX_ITERATIONS {
        let (r, kkt, obj) = kkt_system(set, &emp, x.as_slice(), &alpha);
        let res_x = r.rows(0, d).norm();
        let res_g = r.rows(d, b).amax();
        if res_x <= KKT_RESIDUAL_TOLERANCE && res_g <= FEASIBILITY_TOLERANCE {
            let active = set.active_set(x.as_slice(), ACTIVITY_THRESHOLD);
            return Ok(Solution {
                x: x.as_slice().to_vec(),
                objective: obj,
                diagnostics: Diagnostics {
                    iterations: it + eo.diagnostics.iterations,
                    gradient_norm: res_x,
                    converged: true,
                },
                dual: None,
                multipliers: Some(alpha.as_slice().to_vec()),
                binding_mismatch: active != set.binding,
            });
        }
        let step = kkt
            .lu()
            .solve(&(-&r))
            .ok_or(SolveError::Kkt {
                iterations: it,
                residual: r.norm(),
            })?;
        // Backtrack on the KKT residual norm.
        let base = r.norm();
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let xn = &x + step.rows(0, d) * t;
            let an = &alpha + step.rows(d, b) * t;
            let (rn, _, _) = kkt_system(set, &emp, xn.as_slice(), &an);
            if rn.norm() < (1.0 - 1e-4 * t) * base || (t == 1.0 && rn.norm() <= base) {
                x = xn;
                alpha = an;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Err(SolveError::Kkt {
                iterations: it,
                residual: base,
            });
        }
    }
    let (r, _, _) = kkt_system(set, &emp, x.as_slice(), &alpha);
    Err(SolveError::Kkt {
        iterations: KKT_MAX_ITERATIONS,
        residual: r.norm(),
    })
}

/// `alpha` minimizing `|grad f + A' alpha|`.
fn least_squares_multipliers(set: &ConstraintSet, x: &[f64], g: &DVector<f64>) -> DVector<f64> {
    let a = set.jacobian(x);
    let gram = &a * a.transpose();
    match gram.clone().cholesky() {
        Some(c) => -c.solve(&(&a * g)),
        None => DVector::zeros(a.nrows()),
    }
}

/// Residual `(grad f + A' alpha, g_B(x))`, the KKT matrix and `f(x)`.
fn kkt_system(
    set: &ConstraintSet,
    emp: &Empirical<'_>,
    x: &[f64],
    alpha: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let d = x.len();
    let b = set.binding.len();
    let (f, g, mut h) = emp.mean_derivatives(x);
    let a = set.jacobian(x);
    let mut r = DVector::zeros(d + b);
    let stat = &g + a.transpose() * alpha;
    r.rows_mut(0, d).copy_from(&stat);
    for (i, c) in set.binding_constraints().enumerate() {
        r[d + i] = c.value(x);
        h += c.hessian(d) * alpha[i];
    }
    let mut k = DMatrix::zeros(d + b, d + b);
    k.view_mut((0, 0), (d, d)).copy_from(&h);
    k.view_mut((0, d), (d, b)).copy_from(&a.transpose());
    k.view_mut((d, 0), (b, d)).copy_from(&a);
    (r, k, f)
}
