//! The outer loop: safe-set membership with hysteresis, dispatch to the
//! variant's step or to recovery, and trace recording.

use serde::{Deserialize, Serialize};

use crate::cmdp::{Returns, TabularCmdp};
use crate::error::{Error, Result};
use crate::geometry::{LocalModel, SoftmaxParams};
use crate::lab::trace::{TraceMeta, TrainingTrace};
use crate::optim::config::{AlgoConfig, Variant};
use crate::optim::steps::{
    cpo_step_local, ctrpo_step_local, recovery_step_local, trpo_step_local, StepMode,
};
use crate::sampling::{estimate_local_model, SamplingConfig};

/// Where the local model of each iterate comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSource {
    #[default]
    Exact,
    Sampled(SamplingConfig),
}

fn check_finite(iter: usize, what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            iter,
            what: what.into(),
        })
    }
}

/// Per-iteration seed for sampled models, so runs are reproducible and
/// batches independent across iterations.
fn iteration_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

/// Runs `config.max_iters` steps with exact advantages.
pub fn run_algorithm1(
    cmdp: &TabularCmdp,
    theta0: &SoftmaxParams,
    config: &AlgoConfig,
    variant: Variant,
) -> Result<TrainingTrace> {
    run_algorithm1_with(cmdp, theta0, config, variant, &ModelSource::Exact, 0)
}

/// Runs `config.max_iters` steps. The safe-set test uses threshold `b` while
/// the previous iterate was inside and `hysteresis_fraction * b` to re-enter
/// after leaving; outside, a recovery step is taken. The `trpo` variant
/// ignores the constraints entirely. Rows record exact returns whatever the
/// model source.
pub fn run_algorithm1_with(
    cmdp: &TabularCmdp,
    theta0: &SoftmaxParams,
    config: &AlgoConfig,
    variant: Variant,
    source: &ModelSource,
    seed: u64,
) -> Result<TrainingTrace> {
    config.validate()?;
    if variant == Variant::Cnpg {
        return Err(Error::InvalidArgument(
            "the cnpg variant is integrated by cnpg_flow".into(),
        ));
    }
    if theta0.num_states() != cmdp.num_states() || theta0.num_actions() != cmdp.num_actions() {
        return Err(Error::InvalidArgument("initial parameters do not match the model".into()));
    }
    let canonical = serde_json::to_string(&(config, variant, source))?;
    let mut trace = TrainingTrace::new(TraceMeta::for_model(cmdp, variant.name(), seed, &canonical));
    let b = cmdp.thresholds();
    let mut theta = theta0.clone();
    let mut inside = true;
    for k in 0..config.max_iters {
        check_finite(k, "parameters", theta.as_slice())?;
        let pi = theta.policy();
        let ret = Returns::of(cmdp, &pi)?;
        check_finite(k, "returns", &[ret.reward])?;
        check_finite(k, "costs", &ret.costs)?;
        let model = match source {
            ModelSource::Exact => LocalModel::exact(cmdp, &pi)?,
            ModelSource::Sampled(cfg) => estimate_local_model(cmdp, &pi, cfg, iteration_seed(seed, k))?,
        };
        check_finite(k, "cost estimates", &model.cost_values)?;
        let (next, step) = if variant == Variant::Trpo {
            trpo_step_local(&model, &theta, &model.reward_weight, config, StepMode::Constrained)?
        } else {
            let scale = if inside { 1.0 } else { config.hysteresis_fraction };
            inside = model
                .cost_values
                .iter()
                .zip(b)
                .all(|(v, b)| *v < scale * b);
            if !inside {
                recovery_step_local(&model, &theta, config)?
            } else if variant == Variant::Cpo {
                let (t, s, _) = cpo_step_local(&model, &theta, config)?;
                (t, s)
            } else {
                ctrpo_step_local(&model, &theta, config)?
            }
        };
        check_finite(k, "step", next.as_slice())?;
        trace.push_step(&ret, theta.as_slice(), &step);
        theta = next;
    }
    let k = config.max_iters;
    check_finite(k, "parameters", theta.as_slice())?;
    let ret = Returns::of(cmdp, &theta.policy())?;
    check_finite(k, "returns", &[ret.reward])?;
    check_finite(k, "costs", &ret.costs)?;
    trace.push_terminal(&ret, theta.as_slice(), None);
    Ok(trace)
}
