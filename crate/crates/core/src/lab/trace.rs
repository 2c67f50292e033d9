use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmdp::{Returns, TabularCmdp};
use crate::error::{Error, Result};
use crate::optim::steps::{StepMode, TrustRegionStep};

/// One iterate and the step taken from it. The terminal row carries the
/// final iterate and no step (`mode` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRow {
    pub iter: usize,
    pub reward: f64,
    pub costs: Vec<f64>,
    pub mode: Option<StepMode>,
    pub accepted: bool,
    pub divergence: f64,
    #[serde(default)]
    pub divergence_capped: bool,
    pub step_norm: f64,
    pub backtracks: usize,
    pub regret_cumulative: f64,
    pub theta: Vec<f64>,
    /// Flow time at this iterate, for flow traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub env: String,
    pub thresholds: Vec<f64>,
    pub num_states: usize,
    pub num_actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

/// Hex SHA-256 of a canonical config serialization.
pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// `sum_i [V_{c_i} - b_i]_+`.
pub fn violation(costs: &[f64], thresholds: &[f64]) -> f64 {
    costs
        .iter()
        .zip(thresholds)
        .map(|(v, b)| (v - b).max(0.0))
        .sum()
}

impl TraceMeta {
    pub fn for_model(cmdp: &TabularCmdp, variant: &str, seed: u64, config_canonical: &str) -> Self {
        let env = cmdp
            .provenance()
            .map(|p| format!("{}:{}", p.generator, p.seed))
            .unwrap_or_else(|| "custom".into());
        TraceMeta {
            config_hash: config_hash(config_canonical),
            seed,
            variant: variant.into(),
            env,
            thresholds: cmdp.thresholds().to_vec(),
            num_states: cmdp.num_states(),
            num_actions: cmdp.num_actions(),
        }
    }
}

impl TrainingTrace {
    pub fn new(meta: TraceMeta) -> Self {
        TrainingTrace {
            meta,
            rows: Vec::new(),
        }
    }

    fn regret_so_far(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.regret_cumulative)
    }

    /// Appends the iterate with exact returns `ret` and the step taken from it.
    pub fn push_step(&mut self, ret: &Returns, theta: &[f64], step: &TrustRegionStep) {
        let regret = self.regret_so_far() + violation(&ret.costs, &self.meta.thresholds);
        self.rows.push(TraceRow {
            iter: self.rows.len(),
            reward: ret.reward,
            costs: ret.costs.clone(),
            mode: Some(step.mode),
            accepted: step.accepted,
            divergence: step.divergence_at_accept,
            divergence_capped: step.divergence_capped,
            step_norm: step.step_norm,
            backtracks: step.backtrack_exponent,
            regret_cumulative: regret,
            theta: theta.to_vec(),
            time: None,
        });
    }

    /// Appends a row built by the caller; `iter` and `regret_cumulative` are
    /// filled in here.
    pub fn push_row(&mut self, mut row: TraceRow) {
        row.iter = self.rows.len();
        row.regret_cumulative = self.regret_so_far() + violation(&row.costs, &self.meta.thresholds);
        self.rows.push(row);
    }

    /// Appends the terminal iterate.
    pub fn push_terminal(&mut self, ret: &Returns, theta: &[f64], time: Option<f64>) {
        self.push_row(TraceRow {
            iter: 0,
            reward: ret.reward,
            costs: ret.costs.clone(),
            mode: None,
            accepted: false,
            divergence: 0.0,
            divergence_capped: false,
            step_norm: 0.0,
            backtracks: 0,
            regret_cumulative: 0.0,
            theta: theta.to_vec(),
            time,
        });
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_reward(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.reward)
    }

    pub fn final_costs(&self) -> Vec<f64> {
        self.last().map_or_else(Vec::new, |r| r.costs.clone())
    }

    pub fn total_regret(&self) -> f64 {
        self.regret_so_far()
    }

    /// Writes `<dir>/<stem>.jsonl` (one row per line) and
    /// `<dir>/<stem>.meta.json`, each through a temporary file and rename.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut body = Vec::new();
        for row in &self.rows {
            serde_json::to_writer(&mut body, row)?;
            body.push(b'\n');
        }
        let path = dir.join(format!("{stem}.jsonl"));
        write_atomic(&path, &body)?;
        let meta = serde_json::to_vec_pretty(&self.meta)?;
        write_atomic(&dir.join(format!("{stem}.meta.json")), &meta)?;
        Ok(path)
    }

    /// Reads a trace written by `write`.
    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let meta: TraceMeta =
            serde_json::from_slice(&fs::read(dir.join(format!("{stem}.meta.json")))?)?;
        let file = fs::File::open(dir.join(format!("{stem}.jsonl")))?;
        let mut rows = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                rows.push(serde_json::from_str(&line)?);
            }
        }
        Ok(TrainingTrace { meta, rows })
    }

    /// Checks the structural invariants: contiguous iterations from zero and
    /// nondecreasing cumulative regret.
    pub fn validate(&self) -> Result<()> {
        for (k, row) in self.rows.iter().enumerate() {
            if row.iter != k {
                return Err(Error::Numerical(format!("row {k} has iter {}", row.iter)));
            }
            if k > 0 && row.regret_cumulative < self.rows[k - 1].regret_cumulative {
                return Err(Error::Numerical(format!("regret decreases at row {k}")));
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
