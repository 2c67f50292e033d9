//! Explicit integration of the constrained natural-gradient flow
//! `d theta / dt = G_C(theta)^+ grad V_r(theta)`.
//!
//! Each Euler step is halved until the exact constrained divergence between
//! consecutive iterates fits the per-step budget, the new iterate is strictly
//! safe for every barrier-weighted constraint, and `V_r` has not decreased.
//! After an accepted step the trial step doubles, so the integrator speeds up
//! as the vector field flattens.

use nalgebra::{DMatrix, DVector};

use crate::cmdp::{Returns, TabularCmdp};
use crate::error::{Error, Result};
use crate::geometry::{constrained_divergence_exact, cap_divergence, LocalModel, SoftmaxParams};
use crate::lab::trace::{TraceMeta, TraceRow, TrainingTrace};
use crate::optim::config::{AlgoConfig, Variant};
use crate::optim::steps::StepMode;

/// Tolerance on the per-step decrease of `V_r`.
const MONOTONE_TOL: f64 = 1e-9;
/// Gradients below this sup-norm count as stationary.
const STATIONARY: f64 = 1e-13;
const MAX_HALVINGS: usize = 200;

/// `(G + eps I)^{-1} g` with `eps = 1e-8 trace(G) / dim`.
pub fn damped_solve(g_mat: &DMatrix<f64>, grad: &[f64]) -> Result<Vec<f64>> {
    let n = g_mat.nrows();
    let eps = 1e-8 * g_mat.trace() / n as f64;
    let mut m = g_mat.clone();
    for i in 0..n {
        m[(i, i)] += eps.max(f64::MIN_POSITIVE);
    }
    let rhs = DVector::from_column_slice(grad);
    let x = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m
            .lu()
            .solve(&rhs)
            .ok_or(Error::Singular("flow preconditioner"))?,
    };
    Ok(x.iter().copied().collect())
}

fn margins_ok(ret: &Returns, cmdp: &TabularCmdp, betas: &[f64]) -> bool {
    ret.margins(cmdp)
        .iter()
        .zip(betas)
        .all(|(m, b)| *b == 0.0 || *m > 0.0)
}

/// Integrates the flow from `theta0` up to time `horizon` or
/// `config.flow_max_steps` accepted steps. Each row records the iterate, its
/// flow time, and the step taken from it.
pub fn cnpg_flow(
    cmdp: &TabularCmdp,
    theta0: &SoftmaxParams,
    config: &AlgoConfig,
    horizon: f64,
) -> Result<TrainingTrace> {
    config.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let budget = config.budget(cmdp.num_constraints())?;
    let betas = budget.betas().to_vec();
    let canonical = serde_json::to_string(&(config, Variant::Cnpg, horizon))?;
    let mut trace = TrainingTrace::new(TraceMeta::for_model(cmdp, Variant::Cnpg.name(), 0, &canonical));
    let mut theta = theta0.clone();
    let mut ret = Returns::of(cmdp, &theta.policy())?;
    for (i, m) in ret.margins(cmdp).iter().enumerate() {
        if betas[i] > 0.0 && !(*m > 0.0) {
            return Err(Error::UnsafePolicy {
                constraint: i,
                margin: *m,
            });
        }
    }
    let mut t = 0.0;
    let mut dt = config.flow_step.sqrt();
    for k in 0..config.flow_max_steps {
        if t >= horizon {
            break;
        }
        let pi = theta.policy();
        let model = LocalModel::exact(cmdp, &pi)?;
        let grad = model.advantage_gradient(&model.reward_weight);
        if grad.iter().all(|g| g.abs() < STATIONARY) {
            break;
        }
        let gmat = model.constrained_gramian(config.generator, &budget)?;
        let v = damped_solve(&gmat, &grad)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                iter: k,
                what: "flow direction".into(),
            });
        }
        let mut h = dt.min(horizon - t);
        let mut accepted = None;
        for halvings in 0..MAX_HALVINGS {
            let cand = theta.offset(&v, h);
            let cpi = cand.policy();
            let cret = Returns::of(cmdp, &cpi)?;
            if margins_ok(&cret, cmdp, &betas) && cret.reward >= ret.reward - MONOTONE_TOL {
                match constrained_divergence_exact(cmdp, &cpi, &pi, config.generator, &budget) {
                    Ok(d) if d <= config.flow_step => {
                        accepted = Some((cand, cret, d, halvings));
                        break;
                    }
                    Ok(_) | Err(Error::UnsafePolicy { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            h *= 0.5;
        }
        let Some((cand, cret, d, halvings)) = accepted else {
            return Err(Error::Numerical(format!(
                "flow step {k} at t = {t} found no admissible step size"
            )));
        };
        let (divergence, divergence_capped) = cap_divergence(d);
        trace.push_row(TraceRow {
            iter: 0,
            reward: ret.reward,
            costs: ret.costs.clone(),
            mode: Some(StepMode::Constrained),
            accepted: true,
            divergence,
            divergence_capped,
            step_norm: cand.distance(&theta),
            backtracks: halvings,
            regret_cumulative: 0.0,
            theta: theta.as_slice().to_vec(),
            time: Some(t),
        });
        t += h;
        dt = 2.0 * h;
        theta = cand;
        ret = cret;
    }
    trace.push_terminal(&ret, theta.as_slice(), Some(t));
    Ok(trace)
}
