use serde::{Deserialize, Serialize};

use crate::cmdp::{occupancy, value_bundle, Policy, TabularCmdp, EXPLORATION_FLOOR};
use crate::error::{Error, Result};

/// Tabular softmax logits `theta[s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    num_states: usize,
    num_actions: usize,
    theta: Vec<f64>,
}

impl SoftmaxParams {
    pub fn new(num_states: usize, num_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != num_states * num_actions || num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidArgument(format!(
                "expected {} logits, got {}",
                num_states * num_actions,
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("logits must be finite".into()));
        }
        Ok(SoftmaxParams {
            num_states,
            num_actions,
            theta,
        })
    }

    /// Logits of the uniform policy.
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        SoftmaxParams {
            num_states,
            num_actions,
            theta: vec![0.0; num_states * num_actions],
        }
    }

    pub fn for_model(cmdp: &TabularCmdp) -> Self {
        Self::zeros(cmdp.num_states(), cmdp.num_actions())
    }

    /// `theta = ln pi`, after raising entries to the exploration floor.
    pub fn from_policy(pi: &Policy) -> Self {
        let theta = pi
            .probs()
            .iter()
            .map(|p| p.max(EXPLORATION_FLOOR).ln())
            .collect();
        SoftmaxParams {
            num_states: pi.num_states(),
            num_actions: pi.num_actions(),
            theta,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// `theta + scale * direction`.
    pub fn offset(&self, direction: &[f64], scale: f64) -> Self {
        let theta = self
            .theta
            .iter()
            .zip(direction)
            .map(|(t, d)| t + scale * d)
            .collect();
        SoftmaxParams {
            num_states: self.num_states,
            num_actions: self.num_actions,
            theta,
        }
    }

    pub fn policy(&self) -> Policy {
        policy_of(self)
    }

    pub fn distance(&self, other: &SoftmaxParams) -> f64 {
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Row-wise softmax with the exploration floor applied.
pub fn policy_of(theta: &SoftmaxParams) -> Policy {
    let na = theta.num_actions;
    let mut probs = vec![0.0; theta.theta.len()];
    for (row, out) in theta.theta.chunks(na).zip(probs.chunks_mut(na)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (o, t) in out.iter_mut().zip(row) {
            *o = (t - max).exp();
        }
        let z: f64 = out.iter().sum();
        let mut floored = false;
        for o in out.iter_mut() {
            *o /= z;
            if *o < EXPLORATION_FLOOR {
                *o = EXPLORATION_FLOOR;
                floored = true;
            }
        }
        if floored {
            let z: f64 = out.iter().sum();
            out.iter_mut().for_each(|o| *o /= z);
        }
    }
    Policy::from_raw(theta.num_states, na, probs)
}

/// `grad_theta V_f(mu) = (1 / (1 - gamma)) d(s) pi(a|s) A_f(s, a)`.
pub fn exact_policy_gradient(
    cmdp: &TabularCmdp,
    theta: &SoftmaxParams,
    f: &[f64],
) -> Result<Vec<f64>> {
    let pi = policy_of(theta);
    let vb = value_bundle(cmdp, &pi, f)?;
    let d = occupancy(cmdp, &pi)?;
    let scale = 1.0 / (1.0 - cmdp.discount());
    Ok(d
        .values()
        .iter()
        .zip(&vb.adv)
        .map(|(dsa, a)| scale * dsa * a)
        .collect())
}
