//! Built-in problems, each isolating one result with a closed-form oracle.

use super::constraints::ConstraintFunction;
use super::definition::{DistributionDefinition, LossFamily, ProblemDefinition};
use super::parametric::GaussianPrior;
use super::ProblemSpec;
use crate::error::{Error, Result};

const IDS: [&str; 7] = [
    "gaussian-mean",
    "shifted-gaussian-mean",
    "exp-quadratic",
    "logistic-1d",
    "sphere-constrained-gaussian",
    "gaussian-parametric",
    "gaussian-mle",
];

pub fn catalog_ids() -> &'static [&'static str] {
    &IDS
}

fn identity2() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.0, 1.0]]
}

fn squared_gaussian(id: &str, mean: Vec<f64>) -> ProblemDefinition {
    ProblemDefinition {
        id: id.into(),
        loss: LossFamily::Squared,
        distribution: DistributionDefinition::Gaussian {
            mean,
            cov: identity2(),
        },
        constraint: None,
        prior: None,
    }
}

pub(crate) fn definition_by_id(id: &str) -> Option<ProblemDefinition> {
    let def = match id {
        "gaussian-mean" => squared_gaussian(id, vec![0.0, 0.0]),
        "shifted-gaussian-mean" => squared_gaussian(id, vec![1.0, 0.0]),
        "exp-quadratic" => ProblemDefinition {
            id: id.into(),
            loss: LossFamily::Squared,
            distribution: DistributionDefinition::Exponential { rate: 1.0 },
            constraint: None,
            prior: None,
        },
        "logistic-1d" => ProblemDefinition {
            id: id.into(),
            loss: LossFamily::Logistic,
            distribution: DistributionDefinition::Uniform {
                low: -1.0,
                high: 2.0,
            },
            constraint: None,
            prior: None,
        },
        "sphere-constrained-gaussian" => ProblemDefinition {
            constraint: Some(ConstraintFunction::Sphere { radius: 1.0 }),
            ..squared_gaussian(id, vec![2.0, 0.0])
        },
        "gaussian-parametric" => ProblemDefinition {
            prior: Some(GaussianPrior::isotropic(vec![0.0, 0.0], 1.0)),
            ..squared_gaussian(id, vec![1.0, 0.0])
        },
        "gaussian-mle" => ProblemDefinition {
            id: id.into(),
            loss: LossFamily::GaussianNll,
            distribution: DistributionDefinition::Gaussian {
                mean: vec![0.5],
                cov: vec![vec![1.5 * 1.5]],
            },
            constraint: None,
            prior: None,
        },
        _ => return None,
    };
    Some(def)
}

pub fn problem_by_id(id: &str) -> Result<ProblemSpec> {
    definition_by_id(id)
        .ok_or_else(|| Error::UnknownProblem(id.to_string()))?
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_id_builds() {
        for id in catalog_ids() {
            let p = problem_by_id(id).unwrap();
            assert_eq!(p.id(), *id);
            assert!(p.certificate().stationarity_residual <= 1e-8);
        }
        assert!(matches!(problem_by_id("nope"), Err(Error::UnknownProblem(_))));
    }
}
