use nalgebra::DMatrix;

use crate::numeric::Dd;
use crate::cmdp::{occupancy, value_bundle, Policy, Returns, TabularCmdp};
use crate::error::{Error, Result};
use crate::geometry::barrier::BarrierGenerator;
use crate::geometry::divergence::DivergenceBudget;

/// First-order picture of a CMDP around the current policy `pi_k`.
///
/// Every policy advantage is linear in the candidate policy:
///
/// `A_f(pi) = 1 / (1 - gamma) * sum_{s,a} (pi(a|s) - pi_k(a|s)) W_f(s, a)`
///
/// With exact advantages `W_f(s, a) = d_k(s) A_f(s, a)`. Sample estimates
/// produce a different `W_f` and state weighting but the same interface, so
/// the update rules never need to know which one they got.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub gamma: f64,
    pub policy: Policy,
    /// Weight of each state in the KL term, `d_k(s)` in exact mode.
    pub state_weight: Vec<f64>,
    pub reward_weight: Vec<f64>,
    pub cost_weights: Vec<Vec<f64>>,
    /// `delta_b_i = b_i - V_{c_i}(pi_k)`.
    pub margins: Vec<f64>,
    pub reward_value: f64,
    pub cost_values: Vec<f64>,
}

impl LocalModel {
    pub fn exact(cmdp: &TabularCmdp, pi_k: &Policy) -> Result<Self> {
        let d = occupancy(cmdp, pi_k)?;
        let ds = d.state_marginal();
        let na = cmdp.num_actions();
        let weight = |adv: &[f64]| -> Vec<f64> {
            adv.iter()
                .enumerate()
                .map(|(j, a)| ds[j / na] * a)
                .collect()
        };
        let r = value_bundle(cmdp, pi_k, cmdp.reward())?;
        let mut cost_weights = Vec::with_capacity(cmdp.num_constraints());
        for c in cmdp.costs() {
            let vb = value_bundle(cmdp, pi_k, c)?;
            cost_weights.push(weight(&vb.adv));
        }
        let reward_weight = weight(&r.adv);
        // same evaluation as `Returns::of`, so safety tests agree bitwise
        let ret = Returns::of(cmdp, pi_k)?;
        let cost_values = ret.costs.clone();
        let margins = ret.margins(cmdp);
        Ok(LocalModel {
            gamma: cmdp.discount(),
            policy: pi_k.clone(),
            state_weight: ds,
            reward_weight,
            cost_weights,
            margins,
            reward_value: ret.reward,
            cost_values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.policy.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.policy.num_actions()
    }

    pub fn num_constraints(&self) -> usize {
        self.cost_weights.len()
    }

    pub fn dim(&self) -> usize {
        self.num_states() * self.num_actions()
    }

    /// Policy advantage of `pi` for the advantage weights `w`.
    pub fn advantage(&self, w: &[f64], pi: &Policy) -> f64 {
        // compensated: near the boundary this is compared against a margin
        // of a few ulps
        let mut acc = Dd::default();
        for ((p, pk), w) in pi.probs().iter().zip(self.policy.probs()).zip(w) {
            acc.add_prod(p - pk, *w);
        }
        acc.value() / (1.0 - self.gamma)
    }

    pub fn reward_advantage(&self, pi: &Policy) -> f64 {
        self.advantage(&self.reward_weight, pi)
    }

    pub fn cost_advantage(&self, i: usize, pi: &Policy) -> f64 {
        self.advantage(&self.cost_weights[i], pi)
    }

    /// Gradient of `advantage(w, pi_theta)` in the logits at `theta_k`.
    pub fn advantage_gradient(&self, w: &[f64]) -> Vec<f64> {
        let na = self.num_actions();
        let scale = 1.0 / (1.0 - self.gamma);
        let mut g = vec![0.0; w.len()];
        for s in 0..self.num_states() {
            let p = self.policy.row(s);
            let wrow = &w[s * na..(s + 1) * na];
            let mean: f64 = p.iter().zip(wrow).map(|(p, w)| p * w).sum();
            for a in 0..na {
                g[s * na + a] = scale * p[a] * (wrow[a] - mean);
            }
        }
        g
    }

    /// `sum_s w(s) KL(pi(.|s) || pi_k(.|s))`.
    pub fn kl(&self, pi: &Policy) -> Result<f64> {
        weighted_kl(&self.state_weight, pi, &self.policy)
    }

    /// `sum_s w(s) (diag pi_k - pi_k pi_k^T)`, block diagonal over states.
    pub fn fisher(&self) -> DMatrix<f64> {
        let na = self.num_actions();
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for s in 0..self.num_states() {
            let w = self.state_weight[s];
            let p = self.policy.row(s);
            for a in 0..na {
                for b in 0..na {
                    let diag = if a == b { p[a] } else { 0.0 };
                    g[(s * na + a, s * na + b)] = w * (diag - p[a] * p[b]);
                }
            }
        }
        g
    }

    /// Fisher block plus `beta_i phi''(delta_b_i) g_i g_i^T` for every
    /// constraint, `g_i` the cost-advantage gradient. This is the Hessian of
    /// the surrogate divergence at `pi_k`.
    pub fn constrained_gramian(
        &self,
        gen: BarrierGenerator,
        budget: &DivergenceBudget,
    ) -> Result<DMatrix<f64>> {
        let mut g = self.fisher();
        for i in 0..self.num_constraints() {
            let beta = budget.beta(i);
            if beta == 0.0 {
                continue;
            }
            let margin = self.margins[i];
            if !(margin > 0.0) {
                return Err(Error::UnsafePolicy {
                    constraint: i,
                    margin,
                });
            }
            let grad = nalgebra::DVector::from_vec(self.advantage_gradient(&self.cost_weights[i]));
            g += (&grad * grad.transpose()) * (beta * gen.d2(margin));
        }
        Ok(g)
    }

    /// `D_bar_C(pi || pi_k) = KL term + sum_i beta_i Psi_i(A_{c_i}(pi))`.
    pub fn surrogate_divergence(
        &self,
        pi: &Policy,
        gen: BarrierGenerator,
        budget: &DivergenceBudget,
    ) -> Result<f64> {
        let adv: Vec<f64> = (0..self.num_constraints())
            .map(|i| self.cost_advantage(i, pi))
            .collect();
        self.surrogate_divergence_with(pi, gen, budget, &adv)
    }

    /// Same as `surrogate_divergence` with the cost advantages supplied.
    pub fn surrogate_divergence_with(
        &self,
        pi: &Policy,
        gen: BarrierGenerator,
        budget: &DivergenceBudget,
        adv_c: &[f64],
    ) -> Result<f64> {
        if adv_c.len() != self.num_constraints() {
            return Err(Error::InvalidArgument(format!(
                "expected {} cost advantages, got {}",
                self.num_constraints(),
                adv_c.len()
            )));
        }
        let mut total = self.kl(pi)?;
        for (i, &a) in adv_c.iter().enumerate() {
            let beta = budget.beta(i);
            if beta == 0.0 {
                continue;
            }
            let margin = self.margins[i];
            if !(margin > 0.0) {
                return Err(Error::UnsafePolicy {
                    constraint: i,
                    margin,
                });
            }
            if !(a < margin) {
                return Err(Error::BarrierDomain {
                    constraint: i,
                    advantage: a,
                    margin,
                });
            }
            total += beta * gen.psi(margin, a)?;
        }
        Ok(total)
    }
}

/// `sum_s w(s) KL(p(.|s) || q(.|s))`; states with zero weight are skipped.
pub fn weighted_kl(w: &[f64], p: &Policy, q: &Policy) -> Result<f64> {
    let mut total = 0.0;
    for (s, &ws) in w.iter().enumerate() {
        if ws == 0.0 {
            continue;
        }
        let mut kl = 0.0;
        for (a, (&pa, &qa)) in p.row(s).iter().zip(q.row(s)).enumerate() {
            if pa == 0.0 {
                continue;
            }
            if qa == 0.0 {
                return Err(Error::SupportViolation {
                    state: s,
                    action: a,
                });
            }
            kl += pa * (pa / qa).ln();
        }
        total += ws * kl.max(0.0);
    }
    Ok(total)
}
