use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::run_config::{write_summary, RunConfig, RunOutcome, SummaryRow};
use crate::optim::Beta;

/// Environment variable holding the worker count for sweeps.
pub const WORKERS_ENV: &str = "CTRPO_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    /// Scale applied to every threshold.
    CostLimit,
    HysteresisFraction,
    Delta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::CostLimit => "cost_limit",
            SweepParam::HysteresisFraction => "hysteresis_fraction",
            SweepParam::Delta => "delta",
        }
    }

    pub fn apply(self, base: &RunConfig, value: f64) -> RunConfig {
        let mut c = base.clone();
        match self {
            SweepParam::Beta => c.algo.beta = Beta::Scalar(value),
            SweepParam::CostLimit => c.cost_limit_scale = value,
            SweepParam::HysteresisFraction => c.algo.hysteresis_fraction = value,
            SweepParam::Delta => c.algo.delta = value,
        }
        c
    }
}

/// A grid over one parameter crossed with seeds, on top of a base run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base: RunConfig,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| Error::Config {
            key: "sweep".into(),
            message: e.message().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config {
                key: "values".into(),
                message: "grid is empty".into(),
            });
        }
        if self.seeds.is_empty() {
            return Err(Error::Config {
                key: "seeds".into(),
                message: "need at least one seed".into(),
            });
        }
        self.base.validate()
    }

    /// Every `(value, seed)` cell in grid order, values outermost.
    pub fn cells(&self) -> Vec<(f64, u64)> {
        self.values
            .iter()
            .flat_map(|v| self.seeds.iter().map(move |s| (*v, *s)))
            .collect()
    }

    pub fn cell_config(&self, value: f64, seed: u64) -> RunConfig {
        let mut c = self.parameter.apply(&self.base, value);
        c.seed = seed;
        c
    }

    pub fn cell_stem(&self, value: f64, seed: u64) -> String {
        format!("{}-{}-seed{}", self.parameter.name(), value, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub value: f64,
    pub seed: u64,
    /// A failed cell keeps its error message; other cells are unaffected.
    pub outcome: std::result::Result<RunOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParam,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.cells
            .iter()
            .filter_map(|c| c.outcome.as_ref().ok().map(|o| o.summary.clone()))
            .collect()
    }

    pub fn failures(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.outcome.is_err()).collect()
    }

    pub fn get(&self, value: f64, seed: u64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.value == value && c.seed == seed)
    }
}

/// Worker count from `CTRPO_WORKERS`, defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every cell of `spec` on a pool of `workers` threads. When
/// `spec.base.out_dir` is set each trace is written there, and
/// `summary.csv` lists the successful cells in grid order.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cells: Vec<CellResult> = pool.install(|| {
        spec.cells()
            .par_iter()
            .map(|&(value, seed)| CellResult {
                value,
                seed,
                outcome: spec
                    .cell_config(value, seed)
                    .execute(&spec.cell_stem(value, seed))
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });
    let result = SweepResult {
        parameter: spec.parameter,
        cells,
    };
    if let Some(dir) = &spec.base.out_dir {
        std::fs::create_dir_all(dir)?;
        write_summary(&dir.join("summary.csv"), &result.summary_rows())?;
    }
    Ok(result)
}
