//! Tabular constrained-MDP policy optimization.
//!
//! Exact value and occupancy computations, the barrier-augmented mirror
//! geometry over softmax policies, trust-region updates (TRPO, CPO and the
//! constrained variant with recovery and hysteresis), a natural-gradient flow
//! integrator, a finite-sample estimation layer and experiment orchestration.

pub mod cmdp;
pub mod envs;
pub mod error;
pub mod geometry;
pub mod lab;
pub mod lp;
mod numeric;
pub mod optim;
pub mod sampling;

pub use cmdp::{
    occupancy, policy_from_occupancy, value_bundle, OccupancyMeasure, Policy, Returns,
    TabularCmdp, ValueBundle,
};
pub use error::{Error, Result};
pub use geometry::{BarrierGenerator, DivergenceBudget, LocalModel, SoftmaxParams};
pub use lab::{TraceMeta, TraceRow, TrainingTrace};
pub use optim::{cnpg_flow, run_algorithm1, AlgoConfig, ModelSource, Variant};
