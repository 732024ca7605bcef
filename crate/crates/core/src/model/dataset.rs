use serde::{Deserialize, Serialize};

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub problem: String,
    pub seed: u64,
}

/// `n` draws of a (possibly vector-valued) random element, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    draws: Vec<f64>,
    draw_dim: usize,
    provenance: Provenance,
}

impl Dataset {
    /// # Panics
    /// If `draws` is empty or not a multiple of `draw_dim`.
    pub fn new(draws: Vec<f64>, draw_dim: usize, provenance: Provenance) -> Self {
        assert!(draw_dim > 0 && !draws.is_empty() && draws.len() % draw_dim == 0);
        Dataset {
            draws,
            draw_dim,
            provenance,
        }
    }

    /// Dataset of scalar draws with an anonymous provenance, handy in tests.
    pub fn from_scalars(values: &[f64]) -> Self {
        Dataset::new(
            values.to_vec(),
            1,
            Provenance {
                problem: "literal".into(),
                seed: 0,
            },
        )
    }

    pub fn len(&self) -> usize {
        self.draws.len() / self.draw_dim
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draw_dim(&self) -> usize {
        self.draw_dim
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.draw_dim..(i + 1) * self.draw_dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.draws.chunks_exact(self.draw_dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.draws
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Empirical mean of `f` over the draws (the plain arithmetic average).
    pub fn empirical_mean(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(f).sum::<f64>() / self.len() as f64
    }

    /// Componentwise average of the draws.
    pub fn mean_draw(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.draw_dim];
        for xi in self.iter() {
            for (a, v) in acc.iter_mut().zip(xi) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_mean_is_the_average() {
        let d = Dataset::from_scalars(&[1.0, 2.0, 6.0]);
        assert_eq!(d.len(), 3);
        assert_eq!(d.empirical_mean(|x| x[0]), 3.0);
        assert_eq!(d.empirical_mean(|x| x[0] * x[0]), 41.0 / 3.0);
    }
}
