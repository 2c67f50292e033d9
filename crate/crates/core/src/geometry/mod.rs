//! Mirror-function geometry over tabular softmax policies.

pub mod barrier;
pub mod bounds;
pub mod divergence;
pub mod gramian;
pub mod local;
pub mod softmax;

pub use barrier::BarrierGenerator;
pub use bounds::{advantage_sup, performance_difference_bound, step_slack, PerformanceBound};
pub use divergence::{
    cap_divergence, constrained_divergence_exact, kakade_divergence, policy_advantage,
    surrogate_divergence, DivergenceBudget, DIVERGENCE_CAP,
};
pub use gramian::{constrained_gramian, fisher_gramian};
pub use local::{weighted_kl, LocalModel};
pub use softmax::{exact_policy_gradient, policy_of, SoftmaxParams};
