//! `ctrpo`: run, solve and sweep tabular CMDP experiments from TOML configs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
//! 3 infeasible CMDP. Failures print one JSON record on stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctrpo_core::lab::{run_sweep, worker_count, write_summary, RunConfig, SweepSpec, WORKERS_ENV};
use ctrpo_core::lp::solve_constrained_lp;
use ctrpo_core::{Error, OccupancyMeasure, TrainingTrace};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ctrpo", version, about = "Constrained trust-region experiments on tabular CMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and write its trace, learning curve, effective config
    /// and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, repeatable. Bare keys address `algo`, e.g. `beta=1e-2`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; defaults to `out_dir` from the config, else `.`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the occupancy LP, print the safe optimum and write the occupancy.
    Lp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a one-parameter grid over seeds and write `summary.csv`.
    #[command(after_help = format!("Worker threads come from ${WORKERS_ENV} (default: all cores)."))]
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure together with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Infeasible => 3,
            Error::Config { .. } => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

/// Errors while reading inputs are usage errors whatever their kind.
fn usage(error: Error) -> Failure {
    Failure {
        code: if matches!(error, Error::Infeasible) { 3 } else { 2 },
        error,
    }
}

fn report(f: &Failure) {
    let mut record = json!({
        "error": f.error.kind(),
        "message": f.error.to_string(),
        "exit_code": f.code,
    });
    if let Error::Config { key, .. } = &f.error {
        record["key"] = json!(key);
    }
    eprintln!("{record}");
}

fn out_dir(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}

/// Per-iterate learning curve: one row per trace row, costs in their own
/// columns, ready for external plotting.
fn curve_csv(trace: &TrainingTrace) -> String {
    let m = trace.meta.thresholds.len();
    let mut s = String::from("iter,time,reward");
    for i in 0..m {
        let _ = write!(s, ",cost_{i}");
    }
    s.push_str(",regret_cumulative,mode,accepted,divergence\n");
    for r in &trace.rows {
        let time = r.time.map(|t| t.to_string()).unwrap_or_default();
        let _ = write!(s, "{},{},{}", r.iter, time, r.reward);
        for c in &r.costs {
            let _ = write!(s, ",{c}");
        }
        let mode = match r.mode {
            Some(m) => format!("{m:?}").to_lowercase(),
            None => String::new(),
        };
        let _ = writeln!(s, ",{},{},{},{}", r.regret_cumulative, mode, r.accepted, r.divergence);
    }
    s
}

fn occupancy_csv(d: &OccupancyMeasure) -> String {
    let mut s = String::from("state,action,d\n");
    for st in 0..d.num_states() {
        for a in 0..d.num_actions() {
            let _ = writeln!(s, "{st},{a},{}", d.get(st, a));
        }
    }
    s
}

fn cmd_run(config: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<(), Failure> {
    let base = RunConfig::load(config).map_err(usage)?;
    let mut cfg = base.with_overrides(overrides).map_err(usage)?;
    let dir = out_dir(out, &cfg);
    cfg.out_dir = Some(dir.clone());
    let outcome = cfg.execute("run")?;
    write_file(&dir.join("run.config.toml"), &cfg.to_toml_string()?)?;
    write_file(&dir.join("run.curve.csv"), &curve_csv(&outcome.trace))?;
    write_summary(&dir.join("summary.csv"), std::slice::from_ref(&outcome.summary))?;
    println!(
        "{}",
        json!({
            "trace": outcome.trace_path,
            "final_reward": outcome.summary.final_vr,
            "final_costs": outcome.trace.final_costs(),
            "regret": outcome.summary.regret,
        })
    );
    Ok(())
}

fn cmd_lp(config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = RunConfig::load(config).map_err(usage)?;
    let cmdp = cfg.build_env().map_err(usage)?;
    let (d, value) = solve_constrained_lp(&cmdp)?;
    let dir = out_dir(out, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Failure::from(Error::from(e)))?;
    let path = dir.join("occupancy.csv");
    write_file(&path, &occupancy_csv(&d))?;
    println!("{}", json!({ "optimal_value": value, "occupancy": path }));
    Ok(())
}

fn cmd_sweep(spec: &Path, out: PathBuf) -> Result<(), Failure> {
    let mut spec = SweepSpec::load(spec).map_err(usage)?;
    spec.base.out_dir = Some(out.clone());
    let result = run_sweep(&spec, worker_count())?;
    let failures = result.failures();
    for cell in &failures {
        eprintln!(
            "{}",
            json!({
                "error": "cell_failed",
                "parameter": spec.parameter.name(),
                "value": cell.value,
                "seed": cell.seed,
                "message": cell.outcome.as_ref().err(),
            })
        );
    }
    println!(
        "{}",
        json!({
            "summary": out.join("summary.csv"),
            "cells": result.cells.len(),
            "failed": failures.len(),
        })
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{} of {} cells failed", failures.len(), result.cells.len())).into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides, out } => cmd_run(&config, &overrides, out),
        Command::Lp { config, out } => cmd_lp(&config, out),
        Command::Sweep { spec, out } => cmd_sweep(&spec, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}
