use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::LambdaRule;
use crate::dominance::DominancePolicy;
use crate::error::{Error, Result};
use crate::solvers::{ProcedureKind, ProcedureSpec};

pub const DEFAULT_N_GRID: [usize; 4] = [250, 1000, 4000, 16000];
pub const DEFAULT_REPLICATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// One procedure of an experiment. `lambda` overrides the config-wide rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: ProcedureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaRule>,
}

impl ProcedureEntry {
    pub fn new(kind: ProcedureKind, lambda: Option<LambdaRule>) -> Self {
        ProcedureEntry {
            name: None,
            kind,
            lambda,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| ProcedureSpec::new(self.kind.clone(), 0.0).label())
    }

    /// EO ignores `lambda`.
    pub fn rule<'a>(&'a self, default: &'a LambdaRule) -> &'a LambdaRule {
        self.lambda.as_ref().unwrap_or(default)
    }
}

fn default_lambda() -> LambdaRule {
    LambdaRule::Constant { c: 0.0 }
}

fn default_n_grid() -> Vec<usize> {
    DEFAULT_N_GRID.to_vec()
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    pub procedures: Vec<ProcedureEntry>,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaRule,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub dominance: DominancePolicy,
}

impl ExperimentConfig {
    pub fn new(problem: impl Into<String>, procedures: Vec<ProcedureEntry>) -> Self {
        ExperimentConfig {
            problem: problem.into(),
            procedures,
            lambda: default_lambda(),
            n_grid: default_n_grid(),
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            output: OutputSpec::default(),
            dominance: DominancePolicy::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.replications < 2 {
            return bad(format!("replications = {} (need at least 2)", self.replications));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return bad("n_grid must be nonempty and positive".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid {:?} is not strictly increasing", self.n_grid));
        }
        if self.procedures.is_empty() {
            return bad("no procedures".into());
        }
        if !(self.dominance.z >= 0.0) || self.dominance.grid_points < 2 {
            return bad("dominance policy needs z >= 0 and at least 2 grid points".into());
        }
        let mut seen = HashSet::new();
        for p in &self.procedures {
            let rule = p.rule(&self.lambda);
            rule.validate()?;
            for &n in &self.n_grid {
                let l = rule.resolve(n);
                if !(l >= 0.0 && l.is_finite()) {
                    return bad(format!("lambda rule of {} gives {l} at n = {n}", p.label()));
                }
            }
            if !seen.insert(p.label()) {
                return bad(format!("duplicate procedure name {}; set \"name\"", p.label()));
            }
        }
        Ok(())
    }

    /// Canonical JSON used for hashing and echoing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
