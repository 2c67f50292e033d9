//! Update engines: conjugate gradients, trust-region steps, the outer loop
//! with recovery and hysteresis, and the natural-gradient flow.

pub mod algorithm;
pub mod cg;
pub mod config;
pub mod flow;
pub mod steps;

pub use algorithm::{run_algorithm1, run_algorithm1_with, ModelSource};
pub use cg::conjugate_gradients;
pub use config::{AlgoConfig, Beta, Variant};
pub use flow::{cnpg_flow, damped_solve};
pub use steps::{
    cpo_step, cpo_step_local, ctrpo_step, ctrpo_step_local, recovery_step, recovery_step_local,
    trpo_step, trpo_step_local, CpoCase, Objective, StepMode, TrustRegionStep,
};
