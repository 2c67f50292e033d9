//! Experiment orchestration: traces, metrics, run configs and sweeps.

pub mod metrics;
pub mod run_config;
pub mod sweep;
pub mod trace;

pub use metrics::{bootstrap_ci, cost_regret, iqm, normalized_scores, stratified_bootstrap_ci};
pub use run_config::{write_summary, EnvSpec, InitKind, RunConfig, RunOutcome, SummaryRow};
pub use sweep::{run_sweep, worker_count, CellResult, SweepParam, SweepResult, SweepSpec, WORKERS_ENV};
pub use trace::{config_hash, violation, TraceMeta, TraceRow, TrainingTrace};
