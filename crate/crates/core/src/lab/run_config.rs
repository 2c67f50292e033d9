use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmdp::TabularCmdp;
use crate::envs::{make_gridworld, make_random_cmdp, make_two_state_env, sample_safe_init, sample_unsafe_init};
use crate::error::{Error, Result};
use crate::geometry::SoftmaxParams;
use crate::lab::trace::TrainingTrace;
use crate::optim::{cnpg_flow, run_algorithm1_with, AlgoConfig, Beta, ModelSource, Variant};
use crate::sampling::SamplingConfig;

/// Which CMDP a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Random {
        num_states: usize,
        num_actions: usize,
        #[serde(default = "one")]
        num_costs: usize,
        seed: u64,
    },
    TwoState {
        seed: u64,
    },
    Gridworld {
        width: usize,
        height: usize,
        cost_cells: Vec<(usize, usize)>,
        seed: u64,
    },
    /// A CMDP stored in the JSON model format.
    File {
        path: PathBuf,
    },
}

fn one() -> usize {
    1
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularCmdp> {
        match self {
            EnvSpec::Random {
                num_states,
                num_actions,
                num_costs,
                seed,
            } => make_random_cmdp(*num_states, *num_actions, *num_costs, *seed),
            EnvSpec::TwoState { seed } => make_two_state_env(*seed),
            EnvSpec::Gridworld {
                width,
                height,
                cost_cells,
                seed,
            } => make_gridworld(*width, *height, cost_cells, *seed),
            EnvSpec::File { path } => TabularCmdp::from_json(&fs::read_to_string(path)?),
        }
    }

    /// Short descriptor used in summaries, e.g. `random-4x3-s7`.
    pub fn descriptor(&self) -> String {
        match self {
            EnvSpec::Random {
                num_states,
                num_actions,
                seed,
                ..
            } => format!("random-{num_states}x{num_actions}-s{seed}"),
            EnvSpec::TwoState { seed } => format!("two_state-s{seed}"),
            EnvSpec::Gridworld { width, height, seed, .. } => format!("gridworld-{width}x{height}-s{seed}"),
            EnvSpec::File { path } => format!(
                "file-{}",
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Strictly inside the safe set.
    #[default]
    Safe,
    /// Violating at least one constraint.
    Unsafe,
    /// All-zero logits.
    Uniform,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitKind,
    /// Multiplies every threshold of the generated CMDP.
    #[serde(default = "unit_scale")]
    pub cost_limit_scale: f64,
    #[serde(default)]
    pub algo: AlgoConfig,
    /// Sampled advantages when present, exact otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn unit_scale() -> f64 {
    1.0
}

/// One line of a run or sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub variant: String,
    pub beta: String,
    pub seed: u64,
    #[serde(rename = "final_Vr")]
    pub final_vr: f64,
    /// Semicolon-separated when there are several constraints.
    #[serde(rename = "final_Vc")]
    pub final_vc: String,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: TrainingTrace,
    pub summary: SummaryRow,
    pub trace_path: Option<PathBuf>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// Sets a dotted key in a TOML table, creating intermediate tables.
fn set_path(root: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| config_err("", "empty key"))?;
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(&path.join("."), format!("`{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Dotted key path of the entry on the line containing byte `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line_end = text[line_start..].find('\n').map_or(text.len(), |i| line_start + i);
    let line = text[line_start..line_end].trim();
    let table = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    let (key, is_header) = match line.split_once('=') {
        Some((k, _)) if !line.starts_with('[') => (k.trim().to_string(), false),
        _ => (line.trim_matches(|c| c == '[' || c == ']').trim().to_string(), true),
    };
    match table {
        Some(t) if !is_header => format!("{t}.{key}"),
        _ => key,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|sp| key_at(text, sp.start)).unwrap_or_default();
            config_err(&key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err("", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.algo.validate()?;
        if !(self.cost_limit_scale > 0.0 && self.cost_limit_scale.is_finite()) {
            return Err(config_err("cost_limit_scale", "must be positive"));
        }
        if let Some(s) = &self.sampling {
            if s.episodes == 0 {
                return Err(config_err("sampling.episodes", "must be at least 1"));
            }
            if !(0.0..=1.0).contains(&s.lambda) {
                return Err(config_err("sampling.lambda", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides. Keys are dotted paths; a bare key that
    /// is not a top-level field refers to the `algo` table, so `beta=1e-2`
    /// sets `algo.beta`. Values use TOML syntax, falling back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        const TOP: [&str; 8] = ["env", "variant", "seed", "init", "cost_limit_scale", "algo", "sampling", "out_dir"];
        let text = self.to_toml_string()?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| config_err("", e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| config_err(o, "override must look like key=value"))?;
            let key = key.trim();
            let mut path: Vec<&str> = key.split('.').collect();
            if path.len() == 1 && !TOP.contains(&key) {
                path.insert(0, "algo");
            }
            set_path(&mut table, &path, parse_value(raw.trim()))?;
        }
        let text = toml::to_string(&table).map_err(|e| config_err("", e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn build_env(&self) -> Result<TabularCmdp> {
        let m = self.env.build()?;
        if self.cost_limit_scale == 1.0 {
            Ok(m)
        } else {
            m.scaled_thresholds(self.cost_limit_scale)
        }
    }

    pub fn initial_params(&self, cmdp: &TabularCmdp) -> Result<SoftmaxParams> {
        match self.init {
            InitKind::Safe => sample_safe_init(cmdp, self.seed),
            InitKind::Unsafe => sample_unsafe_init(cmdp, self.seed),
            InitKind::Uniform => Ok(SoftmaxParams::for_model(cmdp)),
        }
    }

    fn beta_label(&self) -> String {
        match &self.algo.beta {
            Beta::Scalar(b) => b.to_string(),
            Beta::PerConstraint(v) => join(v),
        }
    }

    /// Runs the configured variant and, when `out_dir` is set, persists the
    /// trace as `<out_dir>/<stem>.jsonl` plus sidecar metadata.
    pub fn execute(&self, stem: &str) -> Result<RunOutcome> {
        self.validate()?;
        let cmdp = self.build_env()?;
        let theta0 = self.initial_params(&cmdp)?;
        let mut trace = match self.variant {
            Variant::Cnpg => {
                if self.sampling.is_some() {
                    return Err(config_err("sampling", "the flow uses exact advantages only"));
                }
                cnpg_flow(&cmdp, &theta0, &self.algo, self.algo.flow_horizon)?
            }
            v => {
                let source = match &self.sampling {
                    Some(s) => ModelSource::Sampled(s.clone()),
                    None => ModelSource::Exact,
                };
                run_algorithm1_with(&cmdp, &theta0, &self.algo, v, &source, self.seed)?
            }
        };
        trace.meta.seed = self.seed;
        trace.meta.env = self.env.descriptor();
        // where the artifacts go does not change the run
        let mut hashed = self.clone();
        hashed.out_dir = None;
        trace.meta.config_hash = crate::lab::trace::config_hash(&serde_json::to_string(&hashed)?);
        let summary = SummaryRow {
            env: self.env.descriptor(),
            variant: self.variant.name().into(),
            beta: self.beta_label(),
            seed: self.seed,
            final_vr: trace.final_reward(),
            final_vc: join(&trace.final_costs()),
            regret: trace.total_regret(),
        };
        let trace_path = match &self.out_dir {
            Some(dir) => Some(trace.write(dir, stem)?),
            None => None,
        };
        Ok(RunOutcome {
            trace,
            summary,
            trace_path,
        })
    }
}

/// Writes summary rows as CSV with columns
/// `env,variant,beta,seed,final_Vr,final_Vc,regret`.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["env", "variant", "beta", "seed", "final_Vr", "final_Vc", "regret"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(e.to_string()))?;
    crate::lab::trace::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
variant = "ctrpo"
[env]
name = "random"
num_states = 3
num_actions = 2
seed = 1
[algo]
max_iters = 5
"#;

    #[test]
    fn minimal_config_round_trips() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.algo.max_iters, 5);
        assert_eq!(c.init, InitKind::Safe);
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nbogus = 1\n");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let bad = MINIMAL.replace("max_iters", "max_iterz");
        match RunConfig::from_toml_str(&bad) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "algo.max_iterz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_variant_names_the_field() {
        let bad = MINIMAL.replace("\"ctrpo\"", "\"ppo\"");
        match RunConfig::from_toml_str(&bad) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "variant"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn override_changes_only_that_field() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        let o = c.with_overrides(&["beta=1e-2"]).unwrap();
        assert_eq!(o.algo.beta, Beta::Scalar(1e-2));
        let mut expect = c.clone();
        expect.algo.beta = Beta::Scalar(1e-2);
        assert_eq!(o, expect);
        let o = c.with_overrides(&["seed=9", "algo.delta=0.02", "variant=trpo"]).unwrap();
        assert_eq!((o.seed, o.algo.delta, o.variant), (9, 0.02, Variant::Trpo));
        assert!(c.with_overrides(&["nonsense"]).is_err());
        assert!(c.with_overrides(&["algo.nope=1"]).is_err());
    }

    #[test]
    fn execute_writes_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.out_dir = Some(dir.path().to_path_buf());
        let out = c.execute("run").unwrap();
        assert!(out.trace_path.unwrap().exists());
        assert_eq!(out.trace.rows.len(), 6);
        let back = TrainingTrace::read(dir.path(), "run").unwrap();
        assert_eq!(back, out.trace);
    }
}
