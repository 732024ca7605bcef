use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for `g_j(x*) = 0` on the certified binding set.
pub const BINDING_TOLERANCE: f64 = 1e-10;
/// Tolerance for the Lagrangian stationarity residual.
pub const KKT_TOLERANCE: f64 = 1e-8;
/// `|g_j(x)|` below this counts as active when re-detecting the binding set.
pub const ACTIVITY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// `g(x) = 0`
    Equality,
    /// `g(x) <= 0`
    Inequality,
}

/// A smooth constraint function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum ConstraintFunction {
    /// `g(x) = |x|^2 - r^2`
    Sphere { radius: f64 },
    /// `g(x) = a'x - b`
    Linear { normal: Vec<f64>, offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub function: ConstraintFunction,
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn equality(function: ConstraintFunction) -> Self {
        Constraint {
            function,
            kind: ConstraintKind::Equality,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.function {
            ConstraintFunction::Sphere { radius } => {
                x.iter().map(|v| v * v).sum::<f64>() - radius * radius
            }
            ConstraintFunction::Linear { normal, offset } => {
                normal.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - offset
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        match &self.function {
            ConstraintFunction::Sphere { .. } => linalg::vector(x) * 2.0,
            ConstraintFunction::Linear { normal, .. } => linalg::vector(normal),
        }
    }

    pub fn hessian(&self, d: usize) -> DMatrix<f64> {
        match &self.function {
            ConstraintFunction::Sphere { .. } => DMatrix::identity(d, d) * 2.0,
            ConstraintFunction::Linear { .. } => DMatrix::zeros(d, d),
        }
    }

    /// Nearest point of `{g = 0}`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.function {
            ConstraintFunction::Sphere { radius } => {
                let r = crate::model::program::norm(x);
                if r == 0.0 {
                    return Err(Error::Infeasible(
                        "projection onto a sphere from its centre is not unique".into(),
                    ));
                }
                Ok(x.iter().map(|v| radius * v / r).collect())
            }
            ConstraintFunction::Linear { normal, .. } => {
                let a = linalg::vector(normal);
                let t = self.value(x) / a.norm_squared();
                Ok(x.iter().zip(normal).map(|(v, ai)| v - t * ai).collect())
            }
        }
    }
}

/// Constraints with the binding set and multipliers certified at `x*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
    /// Indices of constraints active at `x*`.
    pub binding: Vec<usize>,
    /// `alpha_j*` aligned with `binding`; `None` until certified.
    pub multipliers: Option<Vec<f64>>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        ConstraintSet {
            constraints: Vec::new(),
            binding: Vec::new(),
            multipliers: Some(Vec::new()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn binding_constraints(&self) -> impl Iterator<Item = &Constraint> {
        self.binding.iter().map(move |&j| &self.constraints[j])
    }

    pub fn multipliers(&self) -> Result<&[f64]> {
        self.multipliers
            .as_deref()
            .ok_or_else(|| Error::MissingOracle("constraint multipliers".into()))
    }

    /// Rows are the binding-constraint gradients at `x`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let rows: Vec<DVector<f64>> = self.binding_constraints().map(|c| c.gradient(x)).collect();
        let mut a = DMatrix::zeros(rows.len(), x.len());
        for (i, g) in rows.iter().enumerate() {
            a.set_row(i, &g.transpose());
        }
        a
    }

    /// `objective_hessian + sum_j alpha_j * hess g_j`.
    pub fn lagrangian_hessian(&self, objective_hessian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let alphas = self.multipliers()?;
        let d = objective_hessian.nrows();
        let mut h = objective_hessian.clone();
        for (c, a) in self.binding_constraints().zip(alphas) {
            h += c.hessian(d) * *a;
        }
        Ok(h)
    }

    /// `|grad Z + sum_j alpha_j grad g_j|`.
    pub fn stationarity_residual(&self, x: &[f64], objective_gradient: &DVector<f64>) -> Result<f64> {
        let alphas = self.multipliers()?;
        let mut r = objective_gradient.clone();
        for (c, a) in self.binding_constraints().zip(alphas) {
            r += c.gradient(x) * *a;
        }
        Ok(r.norm())
    }

    /// Checks feasibility of `x`, with slack `tol`.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.constraints.iter().all(|c| {
            let g = c.value(x);
            match c.kind {
                ConstraintKind::Equality => g.abs() <= tol,
                ConstraintKind::Inequality => g <= tol,
            }
        })
    }

    /// Indices with `|g_j(x)| <= threshold`; equalities are always active.
    pub fn active_set(&self, x: &[f64], threshold: f64) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ConstraintKind::Equality || c.value(x).abs() <= threshold)
            .map(|(j, _)| j)
            .collect()
    }

    /// Projects onto each binding constraint in turn; exact for a single one.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        for c in self.binding_constraints() {
            y = c.project(&y)?;
        }
        Ok(y)
    }

    /// Verifies `g_j(x*) = 0` on the binding set and the KKT residual.
    pub fn certify(&self, x: &[f64], objective_gradient: &DVector<f64>) -> Result<f64> {
        for c in self.binding_constraints() {
            let g = c.value(x);
            if g.abs() > BINDING_TOLERANCE {
                return Err(Error::InvalidProblem(format!(
                    "binding constraint violated at x*: g = {g:.3e}"
                )));
            }
        }
        if !self.is_feasible(x, BINDING_TOLERANCE) {
            return Err(Error::InvalidProblem("x* is infeasible".into()));
        }
        let alphas = self.multipliers()?;
        for (c, a) in self.binding_constraints().zip(alphas) {
            if c.kind == ConstraintKind::Inequality && *a < 0.0 {
                return Err(Error::InvalidProblem(format!(
                    "negative multiplier {a} on an inequality"
                )));
            }
        }
        let r = self.stationarity_residual(x, objective_gradient)?;
        if r > KKT_TOLERANCE {
            return Err(Error::InvalidProblem(format!("KKT residual {r:.3e} at x*")));
        }
        Ok(r)
    }
}

/// Orthonormal basis of the null space of the rows of `a` (d columns).
pub fn null_space_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.ncols();
    if a.nrows() == 0 {
        return Ok(DMatrix::identity(d, d));
    }
    let gram = a * a.transpose();
    let gram_inv = linalg::inverse(&gram)?;
    let projector = DMatrix::identity(d, d) - a.transpose() * gram_inv * a;
    let eig = projector.symmetric_eigen();
    let cols: Vec<DVector<f64>> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let mut z = DMatrix::zeros(d, cols.len());
    for (j, c) in cols.iter().enumerate() {
        z.set_column(j, c);
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sphere_set(alpha: Option<f64>) -> ConstraintSet {
        ConstraintSet {
            constraints: vec![Constraint::equality(ConstraintFunction::Sphere { radius: 1.0 })],
            binding: vec![0],
            multipliers: alpha.map(|a| vec![a]),
        }
    }

    #[test]
    fn sphere_lagrangian_hessian() {
        let set = sphere_set(Some(0.5));
        let h = set.lagrangian_hessian(&DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(h, DMatrix::identity(2, 2) * 2.0, epsilon = 1e-15);
        assert!(matches!(
            sphere_set(None).lagrangian_hessian(&DMatrix::identity(2, 2)),
            Err(Error::MissingOracle(_))
        ));
    }

    #[test]
    fn linear_constraint_leaves_hessian_alone() {
        let set = ConstraintSet {
            constraints: vec![Constraint::equality(ConstraintFunction::Linear {
                normal: vec![1.0, 1.0],
                offset: 1.0,
            })],
            binding: vec![0],
            multipliers: Some(vec![3.0]),
        };
        let h0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(set.lagrangian_hessian(&h0).unwrap(), h0);
        let p = set.project(&[2.0, 0.0]).unwrap();
        assert_relative_eq!(p[0] + p[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn certify_sphere_kkt() {
        let set = sphere_set(Some(0.5));
        let grad = linalg::vector(&[-1.0, 0.0]);
        assert!(set.certify(&[1.0, 0.0], &grad).unwrap() < 1e-15);
        assert!(set.certify(&[0.9, 0.0], &grad).is_err());
    }

    #[test]
    fn null_space_is_orthogonal() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 2.0]);
        let z = null_space_basis(&a).unwrap();
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).amax() < 1e-14);
        assert_relative_eq!(z.transpose() * &z, DMatrix::identity(2, 2), epsilon = 1e-14);
    }
}
