//! Performance-difference bounds in the normalized value convention.

use crate::cmdp::{occupancy, value_bundle, Policy, TabularCmdp};
use crate::error::Result;
use crate::geometry::divergence::policy_advantage;
use crate::geometry::local::weighted_kl;

/// `eps_f = 1 / (1 - gamma) * max_s |sum_a pi1(a|s) A_f^{pi2}(s, a)|`.
pub fn advantage_sup(cmdp: &TabularCmdp, pi1: &Policy, pi2: &Policy, f: &[f64]) -> Result<f64> {
    let vb = value_bundle(cmdp, pi2, f)?;
    let na = cmdp.num_actions();
    let max = (0..cmdp.num_states())
        .map(|s| {
            pi1.row(s)
                .iter()
                .zip(&vb.adv[s * na..(s + 1) * na])
                .map(|(p, a)| p * a)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    Ok(max / (1.0 - cmdp.discount()))
}

/// Both sides of the performance-difference bound
/// `|V_f(pi1) - V_f(pi2) - A_f^{pi2}(pi1)| <= 2 gamma eps_f / (1 - gamma) * sqrt(E_{d2} KL / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceBound {
    pub gap: f64,
    pub bound: f64,
    pub eps: f64,
    pub expected_kl: f64,
}

impl PerformanceBound {
    pub fn holds(&self, tol: f64) -> bool {
        self.gap <= self.bound + tol
    }
}

pub fn performance_difference_bound(
    cmdp: &TabularCmdp,
    pi1: &Policy,
    pi2: &Policy,
    f: &[f64],
) -> Result<PerformanceBound> {
    let gamma = cmdp.discount();
    let v1 = value_bundle(cmdp, pi1, f)?.scalar;
    let v2 = value_bundle(cmdp, pi2, f)?.scalar;
    let adv = policy_advantage(cmdp, pi1, pi2, f)?;
    let eps = advantage_sup(cmdp, pi1, pi2, f)?;
    let d2 = occupancy(cmdp, pi2)?.state_marginal();
    let expected_kl = weighted_kl(&d2, pi1, pi2)?;
    Ok(PerformanceBound {
        gap: (v1 - v2 - adv).abs(),
        bound: 2.0 * gamma * eps / (1.0 - gamma) * (0.5 * expected_kl).sqrt(),
        eps,
        expected_kl,
    })
}

/// Per-step slack `sqrt(2 delta) gamma eps / (1 - gamma)` shared by the
/// reward and cost step bounds.
pub fn step_slack(delta: f64, gamma: f64, eps: f64) -> f64 {
    (2.0 * delta).sqrt() * gamma * eps / (1.0 - gamma)
}

/// `E_{d_pi} TV(pi'(.|s), pi(.|s))`.
pub fn expected_total_variation(cmdp: &TabularCmdp, pi_new: &Policy, pi: &Policy) -> Result<f64> {
    let d = occupancy(cmdp, pi)?.state_marginal();
    Ok(d.iter()
        .enumerate()
        .map(|(s, ds)| {
            let tv: f64 = pi_new.row(s).iter().zip(pi.row(s)).map(|(a, b)| (a - b).abs()).sum();
            ds * 0.5 * tv
        })
        .sum())
}
