use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BarrierGenerator, DivergenceBudget};

/// Barrier weight: one value for every constraint, or one per constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Beta {
    Scalar(f64),
    PerConstraint(Vec<f64>),
}

impl Beta {
    pub fn values(&self, m: usize) -> Result<Vec<f64>> {
        match self {
            Beta::Scalar(b) => Ok(vec![*b; m]),
            Beta::PerConstraint(v) if v.len() == m => Ok(v.clone()),
            Beta::PerConstraint(v) => Err(Error::Config {
                key: "algo.beta".into(),
                message: format!("{} values given for {m} constraints", v.len()),
            }),
        }
    }

    pub fn all_zero(&self) -> bool {
        match self {
            Beta::Scalar(b) => *b == 0.0,
            Beta::PerConstraint(v) => v.iter().all(|b| *b == 0.0),
        }
    }
}

impl Default for Beta {
    fn default() -> Self {
        Beta::Scalar(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ctrpo,
    Cpo,
    Trpo,
    Cnpg,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ctrpo => "ctrpo",
            Variant::Cpo => "cpo",
            Variant::Trpo => "trpo",
            Variant::Cnpg => "cnpg",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctrpo" => Ok(Variant::Ctrpo),
            "cpo" => Ok(Variant::Cpo),
            "trpo" => Ok(Variant::Trpo),
            "cnpg" => Ok(Variant::Cnpg),
            other => Err(Error::Config {
                key: "variant".into(),
                message: format!("unknown variant `{other}` (expected ctrpo, cpo, trpo or cnpg)"),
            }),
        }
    }
}

/// Hyperparameters shared by every update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoConfig {
    /// Trust-region radius.
    pub delta: f64,
    pub beta: Beta,
    pub generator: BarrierGenerator,
    /// Re-entry threshold after leaving the safe set, as a fraction of `b`.
    pub hysteresis_fraction: f64,
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    /// Ridge added to the curvature matrix, relative to its mean diagonal.
    pub damping: f64,
    pub max_iters: usize,
    /// Divergence budget per flow step.
    pub flow_step: f64,
    /// Flow integration time.
    pub flow_horizon: f64,
    /// Cap on accepted flow steps.
    pub flow_max_steps: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            delta: 0.01,
            beta: Beta::default(),
            generator: BarrierGenerator::LogBarrier,
            hysteresis_fraction: 0.8,
            backtrack_coeff: 0.8,
            max_backtracks: 10,
            cg_iters: 50,
            cg_tol: 1e-10,
            damping: 1e-8,
            max_iters: 300,
            flow_step: 1e-3,
            flow_horizon: 1e4,
            flow_max_steps: 20_000,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: format!("algo.{key}"),
                message,
            })
        };
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta", format!("must be positive, got {}", self.delta));
        }
        let betas = match &self.beta {
            Beta::Scalar(b) => vec![*b],
            Beta::PerConstraint(v) => v.clone(),
        };
        if betas.is_empty() || betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return bad("beta", "must be finite and nonnegative".into());
        }
        if !(self.hysteresis_fraction > 0.0 && self.hysteresis_fraction <= 1.0) {
            return bad(
                "hysteresis_fraction",
                format!("must lie in (0, 1], got {}", self.hysteresis_fraction),
            );
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return bad("backtrack_coeff", format!("must lie in (0, 1), got {}", self.backtrack_coeff));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return bad("damping", format!("must be nonnegative, got {}", self.damping));
        }
        if self.cg_iters == 0 {
            return bad("cg_iters", "must be at least 1".into());
        }
        if !(self.cg_tol > 0.0) {
            return bad("cg_tol", "must be positive".into());
        }
        if !(self.flow_step > 0.0 && self.flow_step.is_finite()) {
            return bad("flow_step", "must be positive".into());
        }
        if !(self.flow_horizon > 0.0) {
            return bad("flow_horizon", "must be positive".into());
        }
        Ok(())
    }

    pub fn budget(&self, num_constraints: usize) -> Result<DivergenceBudget> {
        DivergenceBudget::new(self.delta, self.beta.values(num_constraints)?)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Beta::Scalar(beta);
        self
    }
}
