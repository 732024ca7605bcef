//! Gauss rules via the Golub–Welsch eigenvalue method.

use nalgebra::DMatrix;

/// Nodes and weights of an `n`-point rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(n: usize, off_diag: impl Fn(usize) -> f64, total_mass: f64) -> Rule {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = off_diag(k);
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], total_mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Probabilists' Gauss–Hermite rule: `sum w_i f(z_i) ~ E[f(Z)]`, `Z ~ N(0, 1)`.
pub fn gauss_hermite(n: usize) -> Rule {
    golub_welsch(n, |k| (k as f64).sqrt(), 1.0)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    golub_welsch(
        n,
        |k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
        2.0,
    )
}

/// Composite Gauss–Legendre integral of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &Rule) -> f64 {
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + width * p as f64;
            let mid = lo + 0.5 * width;
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&z, &w)| w * f(mid + 0.5 * width * z))
                .sum::<f64>()
                * 0.5
                * width
        })
        .sum()
}
