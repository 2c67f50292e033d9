//! Single trust-region updates on a `LocalModel`.
//!
//! All rules share the same skeleton: a linear model of the objective, a
//! quadratic model of the divergence, a conjugate-gradient solve for the
//! direction, and backtracking `alpha^i` until the exact (surrogate)
//! divergence and the acceptance predicate hold. When no candidate passes,
//! the parameters are returned unchanged and the step is marked rejected.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Policy, TabularCmdp};
use crate::error::{Error, Result};
use crate::geometry::{cap_divergence, LocalModel, SoftmaxParams};
use crate::optim::cg::conjugate_gradients;
use crate::optim::config::AlgoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Constrained,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionStep {
    /// Unscaled search direction (`H^{-1} g` for TRPO-style steps).
    pub direction: Vec<f64>,
    /// `sqrt(2 delta / g^T H^{-1} g)`.
    pub step_scale: f64,
    pub backtrack_exponent: usize,
    pub accepted: bool,
    pub mode: StepMode,
    /// Divergence of the accepted candidate; zero when rejected.
    pub divergence_at_accept: f64,
    pub divergence_capped: bool,
    /// Objective policy advantage of the accepted candidate.
    pub improvement: f64,
    /// `||theta_{k+1} - theta_k||`.
    pub step_norm: f64,
}

impl TrustRegionStep {
    fn zero(dim: usize, mode: StepMode) -> Self {
        TrustRegionStep {
            direction: vec![0.0; dim],
            step_scale: 0.0,
            backtrack_exponent: 0,
            accepted: true,
            mode,
            divergence_at_accept: 0.0,
            divergence_capped: false,
            improvement: 0.0,
            step_norm: 0.0,
        }
    }
}

/// What a trust-region step maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Reward,
    /// Minimize cost `i`.
    Cost(usize),
}

/// Candidate verdict from a line-search predicate: `Some((divergence,
/// improvement))` when acceptable.
type Verdict = Option<(f64, f64)>;

fn ridge(h: &mut DMatrix<f64>, damping: f64) {
    let n = h.nrows();
    if n == 0 {
        return;
    }
    let mean = h.diagonal().iter().sum::<f64>() / n as f64;
    let eps = if mean > 0.0 { damping * mean } else { damping.max(1e-12) };
    for i in 0..n {
        h[(i, i)] += eps;
    }
}

fn solve(h: &DMatrix<f64>, g: &[f64], config: &AlgoConfig) -> Result<Vec<f64>> {
    conjugate_gradients(
        |v| {
            let mut out = vec![0.0; v.len()];
            for (i, o) in out.iter_mut().enumerate() {
                *o = h.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
            }
            out
        },
        g,
        config.cg_iters,
        config.cg_tol,
    )
}

fn is_negligible(g: &[f64]) -> bool {
    g.iter().all(|v| v.abs() < 1e-14)
}

fn backtrack<P>(
    theta_k: &SoftmaxParams,
    full_step: &[f64],
    config: &AlgoConfig,
    mut predicate: P,
) -> Result<(SoftmaxParams, usize, Verdict)>
where
    P: FnMut(&Policy, f64) -> Result<Verdict>,
{
    for i in 0..=config.max_backtracks {
        let scale = config.backtrack_coeff.powi(i as i32);
        let cand = theta_k.offset(full_step, scale);
        if let Some(v) = predicate(&cand.policy(), scale)? {
            return Ok((cand, i, Some(v)));
        }
    }
    Ok((theta_k.clone(), config.max_backtracks, None))
}

fn finish(
    theta_k: &SoftmaxParams,
    next: SoftmaxParams,
    direction: Vec<f64>,
    step_scale: f64,
    exponent: usize,
    verdict: Verdict,
    mode: StepMode,
) -> (SoftmaxParams, TrustRegionStep) {
    let (accepted, div, improvement) = match verdict {
        Some((d, imp)) => (true, d, imp),
        None => (false, 0.0, 0.0),
    };
    let (divergence_at_accept, divergence_capped) = cap_divergence(div);
    let step_norm = next.distance(theta_k);
    (
        next,
        TrustRegionStep {
            direction,
            step_scale,
            backtrack_exponent: exponent,
            accepted,
            mode,
            divergence_at_accept,
            divergence_capped,
            improvement,
            step_norm,
        },
    )
}

fn check_dims(model: &LocalModel, theta: &SoftmaxParams) -> Result<()> {
    if theta.num_states() != model.num_states() || theta.num_actions() != model.num_actions() {
        return Err(Error::InvalidArgument("parameters do not match the model".into()));
    }
    Ok(())
}

/// TRPO step maximizing the policy advantage with weights `objective`
/// inside the plain KL region.
pub fn trpo_step_local(
    model: &LocalModel,
    theta_k: &SoftmaxParams,
    objective: &[f64],
    config: &AlgoConfig,
    mode: StepMode,
) -> Result<(SoftmaxParams, TrustRegionStep)> {
    check_dims(model, theta_k)?;
    let g = model.advantage_gradient(objective);
    if is_negligible(&g) {
        return Ok((theta_k.clone(), TrustRegionStep::zero(g.len(), mode)));
    }
    let mut h = model.fisher();
    ridge(&mut h, config.damping);
    let x = solve(&h, &g, config)?;
    let ghg: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
    if !(ghg > 0.0) {
        return Ok((theta_k.clone(), TrustRegionStep::zero(g.len(), mode)));
    }
    let scale = (2.0 * config.delta / ghg).sqrt();
    let full: Vec<f64> = x.iter().map(|v| v * scale).collect();
    let (next, i, verdict) = backtrack(theta_k, &full, config, |pi, _| {
        let kl = model.kl(pi)?;
        let imp = model.advantage(objective, pi);
        Ok((kl <= config.delta && imp >= 0.0).then_some((kl, imp)))
    })?;
    Ok(finish(theta_k, next, x, scale, i, verdict, mode))
}

/// Constrained trust-region step: curvature from the constrained Gramian and
/// acceptance on the surrogate divergence, which rejects any candidate whose
/// cost advantage reaches the margin.
pub fn ctrpo_step_local(
    model: &LocalModel,
    theta_k: &SoftmaxParams,
    config: &AlgoConfig,
) -> Result<(SoftmaxParams, TrustRegionStep)> {
    check_dims(model, theta_k)?;
    let budget = config.budget(model.num_constraints())?;
    for (i, m) in model.margins.iter().enumerate() {
        if budget.beta(i) > 0.0 && !(*m > 0.0) {
            return Err(Error::UnsafePolicy {
                constraint: i,
                margin: *m,
            });
        }
    }
    let g = model.advantage_gradient(&model.reward_weight);
    if is_negligible(&g) {
        return Ok((theta_k.clone(), TrustRegionStep::zero(g.len(), StepMode::Constrained)));
    }
    let mut h = model.constrained_gramian(config.generator, &budget)?;
    ridge(&mut h, config.damping);
    let x = solve(&h, &g, config)?;
    let ghg: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
    if !(ghg > 0.0) {
        return Ok((theta_k.clone(), TrustRegionStep::zero(g.len(), StepMode::Constrained)));
    }
    let scale = (2.0 * config.delta / ghg).sqrt();
    let full: Vec<f64> = x.iter().map(|v| v * scale).collect();
    let (next, i, verdict) = backtrack(theta_k, &full, config, |pi, _| {
        match model.surrogate_divergence(pi, config.generator, &budget) {
            Ok(d) => {
                let imp = model.reward_advantage(pi);
                Ok((d <= config.delta && imp >= 0.0).then_some((d, imp)))
            }
            Err(Error::BarrierDomain { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    Ok(finish(theta_k, next, x, scale, i, verdict, StepMode::Constrained))
}

/// Which branch of the CPO dual produced the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpoCase {
    /// Constraint cannot bind inside the region: plain TRPO step.
    Inactive,
    /// Both the region and the linearized constraint are active.
    Active,
    /// Current point violates the linearization but can be repaired.
    Recoverable,
    /// No point of the region satisfies the linearization.
    Infeasible,
}

/// CPO step for a single constraint. The subproblem
///
/// `max g^T x  s.t.  c + b^T x <= 0,  x^T H x / 2 <= delta`
///
/// with `c = V_c - threshold` is solved through its two-multiplier dual in
/// closed form. An infeasible subproblem yields the pure cost-decreasing
/// step in recovery mode.
pub fn cpo_step_local(
    model: &LocalModel,
    theta_k: &SoftmaxParams,
    config: &AlgoConfig,
) -> Result<(SoftmaxParams, TrustRegionStep, CpoCase)> {
    check_dims(model, theta_k)?;
    if model.num_constraints() != 1 {
        return Err(Error::Unsupported(format!(
            "cpo handles exactly one constraint, model has {}",
            model.num_constraints()
        )));
    }
    let trpo = |case| -> Result<(SoftmaxParams, TrustRegionStep, CpoCase)> {
        let (t, s) = trpo_step_local(model, theta_k, &model.reward_weight, config, StepMode::Constrained)?;
        Ok((t, s, case))
    };
    let delta = config.delta;
    let g = model.advantage_gradient(&model.reward_weight);
    let bgrad = model.advantage_gradient(&model.cost_weights[0]);
    let c = -model.margins[0];
    let mut h = model.fisher();
    ridge(&mut h, config.damping);
    let xb = solve(&h, &bgrad, config)?;
    let s: f64 = bgrad.iter().zip(&xb).map(|(a, b)| a * b).sum();
    if s <= 1e-14 && c < 0.0 {
        return trpo(CpoCase::Inactive);
    }
    let xg = solve(&h, &g, config)?;
    let q: f64 = g.iter().zip(&xg).map(|(a, b)| a * b).sum();
    let r: f64 = g.iter().zip(&xb).map(|(a, b)| a * b).sum();
    let b_coef = 2.0 * delta - c * c / s.max(1e-300);
    if c < 0.0 && b_coef < 0.0 {
        return trpo(CpoCase::Inactive);
    }
    if c >= 0.0 && b_coef < 0.0 {
        let scale = (2.0 * delta / s).sqrt();
        let full: Vec<f64> = xb.iter().map(|v| -v * scale).collect();
        let neg_cost: Vec<f64> = model.cost_weights[0].iter().map(|w| -w).collect();
        let (next, i, verdict) = backtrack(theta_k, &full, config, |pi, _| {
            let kl = model.kl(pi)?;
            let imp = model.advantage(&neg_cost, pi);
            Ok((kl <= delta && imp >= 0.0).then_some((kl, imp)))
        })?;
        let (t, st) = finish(theta_k, next, xb.iter().map(|v| -v).collect(), scale, i, verdict, StepMode::Recovery);
        return Ok((t, st, CpoCase::Infeasible));
    }
    let a_coef = (q - r * r / s).max(0.0);
    let lam_b_free = (q / (2.0 * delta)).sqrt();
    let lam_a_free = (a_coef / b_coef).sqrt();
    let f_a = |lam: f64| -0.5 * (a_coef / lam + b_coef * lam) + r * c / s;
    let f_b = |lam: f64| -0.5 * (q / lam + 2.0 * delta * lam);
    let nu_of = |lam: f64| ((lam * c + r) / s).max(0.0);
    let lam = if c == 0.0 {
        if r > 0.0 {
            lam_a_free
        } else {
            lam_b_free
        }
    } else {
        let lam_mid = -r / c;
        if lam_mid > 0.0 {
            let (lam_a, lam_b) = if c < 0.0 {
                // nu > 0 on (0, lam_mid), nu = 0 beyond
                (lam_a_free.min(lam_mid), lam_b_free.max(lam_mid))
            } else {
                (lam_a_free.max(lam_mid), lam_b_free.min(lam_mid))
            };
            if f_a(lam_a) >= f_b(lam_b) {
                lam_a
            } else {
                lam_b
            }
        } else if c < 0.0 {
            lam_b_free
        } else {
            lam_a_free
        }
    };
    let nu = nu_of(lam);
    if nu == 0.0 && c < 0.0 && lam == lam_b_free {
        return trpo(CpoCase::Inactive);
    }
    let lam = lam.max(1e-12);
    let dir: Vec<f64> = xg.iter().zip(&xb).map(|(a, b)| a - nu * b).collect();
    let full: Vec<f64> = dir.iter().map(|v| v / lam).collect();
    let case = if c < 0.0 { CpoCase::Active } else { CpoCase::Recoverable };
    let linear_tol = 1e-10 * c.abs().max(1.0);
    let b_full: f64 = bgrad.iter().zip(&full).map(|(a, b)| a * b).sum();
    let (next, i, verdict) = backtrack(theta_k, &full, config, |pi, scale| {
        let kl = model.kl(pi)?;
        let imp = model.reward_advantage(pi);
        let lin = c + scale * b_full;
        let improve_ok = imp >= 0.0 || case == CpoCase::Recoverable;
        let cost_ok = lin <= linear_tol || (case == CpoCase::Recoverable && lin <= c);
        Ok((kl <= delta && improve_ok && cost_ok).then_some((kl, imp)))
    })?;
    let (t, st) = finish(theta_k, next, dir, 1.0 / lam, i, verdict, StepMode::Constrained);
    Ok((t, st, case))
}

/// Pure cost-decreasing TRPO step on the summed advantage of every violated
/// constraint (all constraints when none is violated).
pub fn recovery_step_local(
    model: &LocalModel,
    theta_k: &SoftmaxParams,
    config: &AlgoConfig,
) -> Result<(SoftmaxParams, TrustRegionStep)> {
    let violated: Vec<usize> = (0..model.num_constraints())
        .filter(|&i| model.margins[i] < 0.0)
        .collect();
    let chosen: Vec<usize> = if violated.is_empty() {
        (0..model.num_constraints()).collect()
    } else {
        violated
    };
    let mut w = vec![0.0; model.dim()];
    for i in chosen {
        for (o, c) in w.iter_mut().zip(&model.cost_weights[i]) {
            *o -= c;
        }
    }
    trpo_step_local(model, theta_k, &w, config, StepMode::Recovery)
}

fn objective_weight(model: &LocalModel, objective: Objective) -> Result<Vec<f64>> {
    match objective {
        Objective::Reward => Ok(model.reward_weight.clone()),
        Objective::Cost(i) if i < model.num_constraints() => {
            Ok(model.cost_weights[i].iter().map(|w| -w).collect())
        }
        Objective::Cost(i) => Err(Error::InvalidArgument(format!("no cost {i}"))),
    }
}

/// TRPO step with exact advantages.
pub fn trpo_step(
    cmdp: &TabularCmdp,
    theta_k: &SoftmaxParams,
    objective: Objective,
    config: &AlgoConfig,
) -> Result<(SoftmaxParams, TrustRegionStep)> {
    let model = LocalModel::exact(cmdp, &theta_k.policy())?;
    let w = objective_weight(&model, objective)?;
    trpo_step_local(&model, theta_k, &w, config, StepMode::Constrained)
}

/// Constrained trust-region step with exact advantages.
pub fn ctrpo_step(
    cmdp: &TabularCmdp,
    theta_k: &SoftmaxParams,
    config: &AlgoConfig,
) -> Result<(SoftmaxParams, TrustRegionStep)> {
    let model = LocalModel::exact(cmdp, &theta_k.policy())?;
    ctrpo_step_local(&model, theta_k, config)
}

/// CPO step with exact advantages.
pub fn cpo_step(
    cmdp: &TabularCmdp,
    theta_k: &SoftmaxParams,
    config: &AlgoConfig,
) -> Result<(SoftmaxParams, TrustRegionStep, CpoCase)> {
    let model = LocalModel::exact(cmdp, &theta_k.policy())?;
    cpo_step_local(&model, theta_k, config)
}

/// Recovery step with exact advantages.
pub fn recovery_step(
    cmdp: &TabularCmdp,
    theta_k: &SoftmaxParams,
    config: &AlgoConfig,
) -> Result<(SoftmaxParams, TrustRegionStep)> {
    let model = LocalModel::exact(cmdp, &theta_k.policy())?;
    recovery_step_local(&model, theta_k, config)
}
