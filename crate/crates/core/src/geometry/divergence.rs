use serde::{Deserialize, Serialize};

use crate::cmdp::{occupancy, Policy, Returns, TabularCmdp};
use crate::error::{Error, Result};
use crate::geometry::barrier::BarrierGenerator;
use crate::geometry::local::{weighted_kl, LocalModel};

/// Divergence values above this are reported as the cap and flagged.
pub const DIVERGENCE_CAP: f64 = 1e12;

/// Trust-region radius and barrier weights, one `beta` per constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceBudget {
    delta: f64,
    beta: Vec<f64>,
}

impl DivergenceBudget {
    pub fn new(delta: f64, beta: Vec<f64>) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidArgument("beta entries must be finite and >= 0".into()));
        }
        Ok(DivergenceBudget { delta, beta })
    }

    /// The same `beta` for each of `m` constraints.
    pub fn broadcast(delta: f64, beta: f64, m: usize) -> Result<Self> {
        Self::new(delta, vec![beta; m])
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `beta_i`; a single entry is broadcast to every constraint.
    pub fn beta(&self, i: usize) -> f64 {
        match self.beta.len() {
            0 => 0.0,
            1 => self.beta[0],
            _ => self.beta[i],
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }
}

/// Clamps a divergence to `DIVERGENCE_CAP`; the flag reports whether it did.
pub fn cap_divergence(value: f64) -> (f64, bool) {
    if value > DIVERGENCE_CAP || value.is_nan() {
        (DIVERGENCE_CAP, true)
    } else {
        (value, false)
    }
}

/// Kakade divergence `sum_s d_{pi1}(s) KL(pi1(.|s) || pi2(.|s))`.
pub fn kakade_divergence(cmdp: &TabularCmdp, pi1: &Policy, pi2: &Policy) -> Result<f64> {
    let d1 = occupancy(cmdp, pi1)?;
    weighted_kl(&d1.state_marginal(), pi1, pi2)
}

fn strict_margins(cmdp: &TabularCmdp, pi: &Policy, budget: &DivergenceBudget) -> Result<Vec<f64>> {
    let margins = Returns::of(cmdp, pi)?.margins(cmdp);
    for (i, m) in margins.iter().enumerate() {
        if budget.beta(i) > 0.0 && !(*m > 0.0) {
            return Err(Error::UnsafePolicy {
                constraint: i,
                margin: *m,
            });
        }
    }
    Ok(margins)
}

/// Bregman divergence of the barrier-augmented mirror function:
///
/// `D_C = D_K + sum_i beta_i [phi(b_i - V1) - phi(b_i - V2) + phi'(b_i - V2)(V1 - V2)]`
///
/// with `V1 = V_{c_i}(pi1)`, `V2 = V_{c_i}(pi2)`.
pub fn constrained_divergence_exact(
    cmdp: &TabularCmdp,
    pi1: &Policy,
    pi2: &Policy,
    gen: BarrierGenerator,
    budget: &DivergenceBudget,
) -> Result<f64> {
    let m1 = strict_margins(cmdp, pi1, budget)?;
    let m2 = strict_margins(cmdp, pi2, budget)?;
    let mut total = kakade_divergence(cmdp, pi1, pi2)?;
    for i in 0..cmdp.num_constraints() {
        let beta = budget.beta(i);
        if beta > 0.0 {
            total += beta * gen.bregman(m1[i], m2[i]).max(0.0);
        }
    }
    Ok(total)
}

/// Surrogate divergence `D_bar_C(pi || pi_k)` from exact quantities at `pi_k`
/// and supplied cost advantages `adv_c[i] = A_{c_i}^{pi_k}(pi)`.
pub fn surrogate_divergence(
    cmdp: &TabularCmdp,
    pi: &Policy,
    pi_k: &Policy,
    gen: BarrierGenerator,
    budget: &DivergenceBudget,
    adv_c: &[f64],
) -> Result<f64> {
    LocalModel::exact(cmdp, pi_k)?.surrogate_divergence_with(pi, gen, budget, adv_c)
}

/// Exact policy advantage `A_f^{pi_k}(pi)`.
pub fn policy_advantage(cmdp: &TabularCmdp, pi: &Policy, pi_k: &Policy, f: &[f64]) -> Result<f64> {
    let d = occupancy(cmdp, pi_k)?.state_marginal();
    let vb = crate::cmdp::value_bundle(cmdp, pi_k, f)?;
    let na = cmdp.num_actions();
    let s: f64 = pi
        .probs()
        .iter()
        .enumerate()
        .map(|(j, p)| d[j / na] * p * vb.adv[j])
        .sum();
    Ok(s / (1.0 - cmdp.discount()))
}
