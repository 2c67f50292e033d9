//! Exact tabular CMDP model.
//!
//! Values use the (1 - gamma)-normalized convention throughout:
//!
//! `V_f(s) = (1 - gamma) E[ sum_t gamma^t f(s_t, a_t) | s_0 = s ]`
//!
//! so that `V_f(mu) = f^T d_pi` holds exactly for the discounted occupancy
//! measure `d_pi`. Most RL code omits the `(1 - gamma)` factor; every value,
//! Q-value and advantage in this crate carries it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Dd;

const ROW_TOL: f64 = 1e-12;

/// Entries below this are raised before conditioning / log evaluations.
pub const EXPLORATION_FLOOR: f64 = 1e-12;

/// Where a model came from. Carried through serialization for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<String>,
}

/// Finite constrained MDP with dense kernels.
///
/// Tensors are stored flattened row-major: `transition[(s * A + a) * S + s']`,
/// `reward[s * A + a]`, `costs[i][s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "CmdpRecord")]
pub struct TabularCmdp {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    initial_dist: Vec<f64>,
    transition: Vec<f64>,
    reward: Vec<f64>,
    costs: Vec<Vec<f64>>,
    thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CmdpRecord {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    initial_dist: Vec<f64>,
    transition: Vec<f64>,
    reward: Vec<f64>,
    costs: Vec<Vec<f64>>,
    thresholds: Vec<f64>,
    #[serde(default)]
    provenance: Option<Provenance>,
}

impl TryFrom<CmdpRecord> for TabularCmdp {
    type Error = Error;

    fn try_from(r: CmdpRecord) -> Result<Self> {
        let mut m = TabularCmdp::new(
            r.num_states,
            r.num_actions,
            r.transition,
            r.reward,
            r.costs,
            r.thresholds,
            r.discount,
            r.initial_dist,
        )?;
        m.provenance = r.provenance;
        Ok(m)
    }
}

impl TabularCmdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        costs: Vec<Vec<f64>>,
        thresholds: Vec<f64>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let m = TabularCmdp {
            num_states,
            num_actions,
            discount,
            initial_dist,
            transition,
            reward,
            costs,
            thresholds,
            provenance: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    fn validate(&self) -> Result<()> {
        let (s, a) = (self.num_states, self.num_actions);
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if s == 0 || a == 0 {
            return bad("num_states and num_actions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} not in [0, 1)", self.discount));
        }
        if self.transition.len() != s * a * s {
            return bad(format!(
                "transition has {} entries, expected {}",
                self.transition.len(),
                s * a * s
            ));
        }
        if self.reward.len() != s * a {
            return bad(format!("reward has {} entries, expected {}", self.reward.len(), s * a));
        }
        if self.costs.is_empty() {
            return bad("at least one cost function is required".into());
        }
        if self.costs.len() != self.thresholds.len() {
            return bad(format!(
                "{} cost tables but {} thresholds",
                self.costs.len(),
                self.thresholds.len()
            ));
        }
        for (i, c) in self.costs.iter().enumerate() {
            if c.len() != s * a {
                return bad(format!("cost {i} has {} entries, expected {}", c.len(), s * a));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return bad(format!("cost {i} has non-finite entries"));
            }
        }
        if self.reward.iter().any(|v| !v.is_finite()) || self.thresholds.iter().any(|v| !v.is_finite())
        {
            return bad("reward/thresholds must be finite".into());
        }
        check_distribution(&self.initial_dist, s).map_err(|e| Error::InvalidModel(format!("initial_dist: {e}")))?;
        for sa in 0..s * a {
            let row = &self.transition[sa * s..(sa + 1) * s];
            check_distribution(row, s).map_err(|e| {
                Error::InvalidModel(format!("transition row (s={}, a={}): {e}", sa / a, sa % a))
            })?;
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of state-action pairs, i.e. the tabular parameter dimension.
    pub fn dim(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn num_constraints(&self) -> usize {
        self.costs.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn cost(&self, i: usize) -> &[f64] {
        &self.costs[i]
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// `P(. | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let sa = s * self.num_actions + a;
        &self.transition[sa * n..(sa + 1) * n]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Same model with different cost thresholds.
    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        m.thresholds = thresholds;
        m.validate()?;
        Ok(m)
    }

    /// Same model with `thresholds[i] *= scale`.
    pub fn scaled_thresholds(&self, scale: f64) -> Result<Self> {
        self.with_thresholds(self.thresholds.iter().map(|b| b * scale).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.num_states != self.num_states || pi.num_actions != self.num_actions {
            return Err(Error::InvalidPolicy(format!(
                "policy is {}x{}, model is {}x{}",
                pi.num_states, pi.num_actions, self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    fn check_table(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "function table has {} entries, expected {}",
                f.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Policy-averaged state transition matrix `P_pi[s][s']`.
    fn policy_kernel(&self, pi: &Policy) -> DMatrix<f64> {
        let n = self.num_states;
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (sp, &pr) in self.next_dist(s, a).iter().enumerate() {
                    p[(s, sp)] += w * pr;
                }
            }
        }
        p
    }
}

fn check_distribution(p: &[f64], len: usize) -> std::result::Result<(), String> {
    if p.len() != len {
        return Err(format!("has {} entries, expected {len}", p.len()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err("entries must be finite and nonnegative".into());
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

/// Row-stochastic `|S| x |A|` table `pi(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidPolicy("empty policy".into()));
        }
        if probs.len() != num_states * num_actions {
            return Err(Error::InvalidPolicy(format!(
                "{} entries for a {num_states}x{num_actions} policy",
                probs.len()
            )));
        }
        for s in 0..num_states {
            check_distribution(&probs[s * num_actions..(s + 1) * num_actions], num_actions)
                .map_err(|e| Error::InvalidPolicy(format!("row {s}: {e}")))?;
        }
        Ok(Policy {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Normalizes each row of a nonnegative table. Rows summing to zero are rejected.
    pub fn from_weights(num_states: usize, num_actions: usize, mut w: Vec<f64>) -> Result<Self> {
        if w.len() != num_states * num_actions {
            return Err(Error::InvalidPolicy("weight table has wrong size".into()));
        }
        for s in 0..num_states {
            let row = &mut w[s * num_actions..(s + 1) * num_actions];
            let z: f64 = row.iter().sum();
            if !(z > 0.0) || row.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidPolicy(format!("row {s} has no positive mass")));
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        Ok(Policy {
            num_states,
            num_actions,
            probs: w,
        })
    }

    pub(crate) fn from_raw(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        Policy {
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_interior(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }

    /// Raises every entry to at least `floor` and renormalizes.
    pub fn clamped(&self, floor: f64) -> Self {
        let mut w = self.probs.clone();
        for s in 0..self.num_states {
            let row = &mut w[s * self.num_actions..(s + 1) * self.num_actions];
            row.iter_mut().for_each(|v| *v = v.max(floor));
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= z);
        }
        Policy::from_raw(self.num_states, self.num_actions, w)
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Discounted state-action occupancy `d[s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    num_states: usize,
    num_actions: usize,
    d: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn new(num_states: usize, num_actions: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != num_states * num_actions {
            return Err(Error::InvalidArgument("occupancy has wrong size".into()));
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("occupancy entries must be nonnegative".into()));
        }
        Ok(OccupancyMeasure {
            num_states,
            num_actions,
            d,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.num_actions + a]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `d(s) = sum_a d(s, a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| self.d[s * self.num_actions..(s + 1) * self.num_actions].iter().sum())
            .collect()
    }

    /// `f^T d`.
    pub fn dot(&self, f: &[f64]) -> f64 {
        self.d.iter().zip(f).map(|(d, f)| d * f).sum()
    }

    /// Bellman flow residuals `l_s(d)`; all zero for a valid occupancy.
    pub fn flow_residual(&self, cmdp: &TabularCmdp) -> Vec<f64> {
        let (ns, na) = (self.num_states, self.num_actions);
        let gamma = cmdp.discount();
        let mut res: Vec<f64> = self
            .state_marginal()
            .iter()
            .zip(cmdp.initial_dist())
            .map(|(ds, mu)| ds - (1.0 - gamma) * mu)
            .collect();
        for sp in 0..ns {
            for ap in 0..na {
                let w = self.get(sp, ap);
                if w == 0.0 {
                    continue;
                }
                for (s, p) in cmdp.next_dist(sp, ap).iter().enumerate() {
                    res[s] -= gamma * w * p;
                }
            }
        }
        res
    }
}

/// Value, Q-value and advantage tables for one function `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub adv: Vec<f64>,
    /// `V_f(mu)`.
    pub scalar: f64,
}

/// Solves `(I - gamma P_pi) V = (1 - gamma) f_pi` and derives `Q` and `A = Q - V`.
pub fn value_bundle(cmdp: &TabularCmdp, pi: &Policy, f: &[f64]) -> Result<ValueBundle> {
    cmdp.check_policy(pi)?;
    cmdp.check_table(f)?;
    let (ns, na) = (cmdp.num_states(), cmdp.num_actions());
    let gamma = cmdp.discount();
    let p = cmdp.policy_kernel(pi);
    let lhs = DMatrix::identity(ns, ns) - p * gamma;
    let rhs = DVector::from_fn(ns, |s, _| {
        (1.0 - gamma) * (0..na).map(|a| pi.prob(s, a) * f[s * na + a]).sum::<f64>()
    });
    let v = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("solving the policy evaluation system"))?;
    let v: Vec<f64> = v.iter().copied().collect();
    let mut q = vec![0.0; ns * na];
    let mut adv = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = cmdp.next_dist(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            let qsa = (1.0 - gamma) * f[s * na + a] + gamma * next;
            q[s * na + a] = qsa;
            adv[s * na + a] = qsa - v[s];
        }
    }
    let scalar = v.iter().zip(cmdp.initial_dist()).map(|(v, mu)| v * mu).sum();
    Ok(ValueBundle { v, q, adv, scalar })
}

/// State marginals of the discounted occupancy per unit of policy mass,
/// solved in `f64` and then refined twice with residuals accumulated in
/// double-double arithmetic. A softmax row rarely sums to one exactly in
/// `f64`; the returned `y` satisfies `d(s, a) = y(s) pi(a|s)` for the
/// exactly normalized policy, so values derived from it are accurate to
/// about one rounding.
fn refined_state_occupancy(cmdp: &TabularCmdp, pi: &Policy) -> Result<Vec<Dd>> {
    let (ns, na) = (cmdp.num_states(), cmdp.num_actions());
    let gamma = cmdp.discount();
    let p = cmdp.policy_kernel(pi);
    let lu = (DMatrix::identity(ns, ns) - p.transpose() * gamma).lu();
    let mu = cmdp.initial_dist();
    let mass: Vec<Dd> = (0..ns)
        .map(|s| {
            let mut m = Dd::default();
            for a in 0..na {
                m.add(pi.prob(s, a));
            }
            m
        })
        .collect();
    let rhs = DVector::from_fn(ns, |s, _| (1.0 - gamma) * mu[s]);
    let x0 = lu
        .solve(&rhs)
        .ok_or(Error::Singular("solving the Bellman flow equations"))?;
    let mut x: Vec<Dd> = x0.iter().map(|v| Dd::new(*v, 0.0)).collect();
    for _ in 0..2 {
        let mut inflow = vec![Dd::default(); ns];
        for sp in 0..ns {
            for a in 0..na {
                let w = pi.prob(sp, a);
                for (s, &pr) in cmdp.next_dist(sp, a).iter().enumerate() {
                    if pr != 0.0 {
                        inflow[s].add_prod3(x[sp], w, pr);
                    }
                }
            }
        }
        let r = DVector::from_fn(ns, |s, _| {
            let mut acc = Dd::default();
            acc.add_prod(1.0 - gamma, mu[s]);
            let out = x[s].mul(mass[s]);
            acc.add(-out.hi);
            acc.add(-out.lo);
            acc.add_prod(gamma, inflow[s].hi);
            acc.add(gamma * inflow[s].lo);
            acc.value()
        });
        let dx = lu
            .solve(&r)
            .ok_or(Error::Singular("solving the Bellman flow equations"))?;
        for (xs, d) in x.iter_mut().zip(dx.iter()) {
            xs.add(*d);
        }
    }
    Ok(x)
}

/// `sum_{s,a} d(s) pi(a|s) f(s,a)` accumulated in double-double.
fn refined_value(x: &[Dd], pi: &Policy, f: &[f64]) -> Dd {
    let na = pi.num_actions();
    let mut acc = Dd::default();
    for (s, xs) in x.iter().enumerate() {
        for a in 0..na {
            acc.add_prod3(*xs, pi.prob(s, a), f[s * na + a]);
        }
    }
    let hi = acc.value();
    Dd { hi, lo: (acc.hi - hi) + acc.lo }
}

/// Discounted occupancy of `pi`, from the flow equations on state marginals.
pub fn occupancy(cmdp: &TabularCmdp, pi: &Policy) -> Result<OccupancyMeasure> {
    cmdp.check_policy(pi)?;
    let (ns, na) = (cmdp.num_states(), cmdp.num_actions());
    let ds = refined_state_occupancy(cmdp, pi)?;
    let mut d = vec![0.0; ns * na];
    for s in 0..ns {
        // tiny negative round-off from the solve
        let m = ds[s].value().max(0.0);
        for a in 0..na {
            d[s * na + a] = m * pi.prob(s, a);
        }
    }
    Ok(OccupancyMeasure {
        num_states: ns,
        num_actions: na,
        d,
    })
}

/// Conditions an occupancy measure on states: `pi(a|s) = d(s,a) / d(s)`.
pub fn policy_from_occupancy(d: &OccupancyMeasure) -> Result<Policy> {
    let (ns, na) = (d.num_states, d.num_actions);
    let mut probs = vec![0.0; ns * na];
    for (s, ds) in d.state_marginal().into_iter().enumerate() {
        if !(ds > 0.0) {
            return Err(Error::DegenerateOccupancy { state: s });
        }
        for a in 0..na {
            probs[s * na + a] = d.get(s, a) / ds;
        }
    }
    Ok(Policy::from_raw(ns, na, probs))
}

/// Scalar values of reward and every cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    pub reward: f64,
    pub costs: Vec<f64>,
    /// Rounding error of `costs`: the cost values are `costs + cost_residuals`
    /// to about double-double accuracy. Empty means zero.
    pub cost_residuals: Vec<f64>,
}

impl Returns {
    /// Values accurate to about one rounding, so that safety tests near the
    /// boundary are decided by the policy and not by solver round-off.
    pub fn of(cmdp: &TabularCmdp, pi: &Policy) -> Result<Self> {
        cmdp.check_policy(pi)?;
        let x = refined_state_occupancy(cmdp, pi)?;
        let costs: Vec<Dd> = cmdp.costs().iter().map(|c| refined_value(&x, pi, c)).collect();
        Ok(Returns {
            reward: refined_value(&x, pi, cmdp.reward()).hi,
            costs: costs.iter().map(|c| c.hi).collect(),
            cost_residuals: costs.iter().map(|c| c.lo).collect(),
        })
    }

    /// `b_i - V_{c_i}` for every constraint, including the low-order part
    /// of the cost values.
    pub fn margins(&self, cmdp: &TabularCmdp) -> Vec<f64> {
        cmdp.thresholds()
            .iter()
            .zip(&self.costs)
            .enumerate()
            .map(|(i, (b, v))| (b - v) - self.cost_residuals.get(i).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn is_safe(&self, cmdp: &TabularCmdp) -> bool {
        self.margins(cmdp).iter().all(|m| *m >= 0.0)
    }
}
