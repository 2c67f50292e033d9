//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use ctrpo_core::envs::{make_random_cmdp, make_two_state_env, sample_safe_init};
use ctrpo_core::geometry::{
    advantage_sup, constrained_divergence_exact, performance_difference_bound, step_slack,
    BarrierGenerator, DivergenceBudget, LocalModel, SoftmaxParams,
};
use ctrpo_core::lab::{run_sweep, EnvSpec, InitKind, RunConfig, SweepParam, SweepSpec};
use ctrpo_core::lp::solve_constrained_lp;
use ctrpo_core::optim::{cpo_step, ctrpo_step, CpoCase, StepMode};
use ctrpo_core::sampling::{default_horizon, estimate_surrogate_divergence, sample_trajectories, SamplingConfig};
use ctrpo_core::{cnpg_flow, run_algorithm1, AlgoConfig, Returns, TabularCmdp, TrainingTrace, Variant};

use common::*;

type Outcome = Result<String, String>;

/// A consecutive pair of iterates and the divergence budget the step
/// respected.
struct StepRecord {
    cmdp_index: usize,
    theta_k: Vec<f64>,
    theta_next: Vec<f64>,
    delta: f64,
    beta: f64,
}

struct Corpus {
    cmdps: Vec<TabularCmdp>,
    steps: Vec<StepRecord>,
}

fn params(m: &TabularCmdp, theta: &[f64]) -> SoftmaxParams {
    SoftmaxParams::new(m.num_states(), m.num_actions(), theta.to_vec()).unwrap()
}

fn invariance_cmdps() -> Vec<TabularCmdp> {
    let mut v: Vec<TabularCmdp> = (0..20u64)
        .map(|seed| make_random_cmdp(2 + (seed as usize % 5), 2 + (seed as usize % 2), 1, seed).unwrap())
        .collect();
    v.push(make_two_state_env(0).unwrap());
    v
}

fn criterion_1(corpus: &mut Corpus) -> Outcome {
    let start = Instant::now();
    let config = AlgoConfig::default();
    let mut violations = 0usize;
    let mut iterates = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for (idx, m) in invariance_cmdps().into_iter().enumerate() {
        let theta0 = sample_safe_init(&m, idx as u64).map_err(|e| e.to_string())?;
        let trace = run_algorithm1(&m, &theta0, &config, Variant::Ctrpo).map_err(|e| e.to_string())?;
        let b = m.thresholds()[0];
        for row in &trace.rows {
            iterates += 1;
            worst = worst.max(row.costs[0] - b);
            if row.costs[0] > b {
                violations += 1;
            }
        }
        let ci = corpus.cmdps.len();
        for w in trace.rows.windows(2) {
            if w[0].accepted && w[0].mode == Some(StepMode::Constrained) {
                corpus.steps.push(StepRecord {
                    cmdp_index: ci,
                    theta_k: w[0].theta.clone(),
                    theta_next: w[1].theta.clone(),
                    delta: config.delta,
                    beta: 1.0,
                });
            }
        }
        corpus.cmdps.push(m);
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{violations} of {iterates} iterates with V_c > b (max V_c - b = {worst:.3e}), {:.1}s",
        elapsed.as_secs_f64()
    );
    if violations == 0 && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2(corpus: &mut Corpus) -> Outcome {
    let start = Instant::now();
    let config = AlgoConfig::default();
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    for seed in 0..10u64 {
        let m = make_random_cmdp(3 + (seed as usize % 4), 3, 1, 100 + seed).map_err(|e| e.to_string())?;
        let (_, opt) = solve_constrained_lp(&m).map_err(|e| e.to_string())?;
        let theta0 = sample_safe_init(&m, seed).map_err(|e| e.to_string())?;
        let trace = cnpg_flow(&m, &theta0, &config, config.flow_horizon).map_err(|e| e.to_string())?;
        let gap = (trace.final_reward() - opt).abs();
        worst = worst.max(gap);
        if gap >= 1e-3 {
            misses += 1;
        }
        let ci = corpus.cmdps.len();
        let budget = config.budget(1).unwrap();
        for w in trace.rows.windows(2) {
            // budget actually used by this flow step, in surrogate terms
            let model = LocalModel::exact(&m, &params(&m, &w[0].theta).policy()).unwrap();
            let pi_next = params(&m, &w[1].theta).policy();
            let delta = match model.surrogate_divergence(&pi_next, config.generator, &budget) {
                Ok(d) => d.max(0.0),
                Err(_) => continue,
            };
            corpus.steps.push(StepRecord {
                cmdp_index: ci,
                theta_k: w[0].theta.clone(),
                theta_next: w[1].theta.clone(),
                delta,
                beta: 1.0,
            });
        }
        corpus.cmdps.push(m);
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{misses} of 10 flows off the LP optimum by >= 1e-3 (max gap {worst:.3e}), {:.1}s",
        elapsed.as_secs_f64()
    );
    if misses == 0 && elapsed < Duration::from_secs(300) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3(corpus: &Corpus) -> Outcome {
    let gen = BarrierGenerator::LogBarrier;
    let mut violations = 0;
    let mut margin_failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for st in &corpus.steps {
        let m = &corpus.cmdps[st.cmdp_index];
        let pk = params(m, &st.theta_k).policy();
        let pn = params(m, &st.theta_next).policy();
        let rk = Returns::of(m, &pk).unwrap();
        let rn = Returns::of(m, &pn).unwrap();
        let margin = rk.margins(m)[0];
        let psi_inv = gen.psi_inverse(margin, st.delta / st.beta).map_err(|e| e.to_string())?;
        if !(psi_inv < margin) {
            margin_failures += 1;
        }
        let eps = advantage_sup(m, &pn, &pk, m.cost(0)).unwrap();
        let excess = rn.costs[0] - rk.costs[0] - psi_inv - step_slack(st.delta, m.discount(), eps);
        worst = worst.max(excess);
        if excess > 0.0 {
            violations += 1;
        }
    }
    let betas = [1.0, 1e2, 1e4, 1e6];
    let inv: Vec<f64> = betas.iter().map(|b| gen.psi_inverse(0.1, 0.01 / b).unwrap()).collect();
    let monotone = inv.windows(2).all(|w| w[1] < w[0]) && inv[3] < 1e-4;
    let detail = format!(
        "{violations} of {} steps exceed the cost bound (max excess {worst:.3e}); {margin_failures} margin failures; Psi^-1(delta/beta) = {:?}",
        corpus.steps.len(),
        inv.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
    );
    if violations == 0 && margin_failures == 0 && monotone {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4(corpus: &Corpus) -> Outcome {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for st in &corpus.steps {
        let m = &corpus.cmdps[st.cmdp_index];
        let pk = params(m, &st.theta_k).policy();
        let pn = params(m, &st.theta_next).policy();
        let rk = Returns::of(m, &pk).unwrap();
        let rn = Returns::of(m, &pn).unwrap();
        let eps = advantage_sup(m, &pn, &pk, m.reward()).unwrap();
        let deficit = rk.reward - step_slack(st.delta, m.discount(), eps) - rn.reward;
        worst = worst.max(deficit);
        if deficit > 0.0 {
            violations += 1;
        }
    }
    let detail = format!(
        "{violations} of {} steps below the reward bound (max deficit {worst:.3e})",
        corpus.steps.len()
    );
    if violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5() -> Outcome {
    let betas = [1.0, 1e-2, 1e-4, 1e-8];
    let base = AlgoConfig::default();
    let mut matched = 0;
    let mut non_monotone = 0;
    let mut worst_final: f64 = 0.0;
    for seed in 0..5u64 {
        let m = make_random_cmdp(4, 3, 1, 200 + seed).unwrap();
        let mut theta = sample_safe_init(&m, seed).unwrap();
        for _ in 0..6 {
            let (next_cpo, _, case) = cpo_step(&m, &theta, &base).map_err(|e| e.to_string())?;
            if case == CpoCase::Inactive {
                matched += 1;
                let dists: Vec<f64> = betas
                    .iter()
                    .map(|b| {
                        let (t, _) = ctrpo_step(&m, &theta, &base.clone().with_beta(*b)).unwrap();
                        t.distance(&next_cpo)
                    })
                    .collect();
                if !dists.windows(2).all(|w| w[1] <= w[0]) {
                    non_monotone += 1;
                }
                worst_final = worst_final.max(dists[3]);
            }
            theta = next_cpo;
        }
    }
    let detail = format!(
        "{matched} matched iterates, {non_monotone} non-monotone, max distance at beta = 1e-8: {worst_final:.3e}"
    );
    if matched > 0 && non_monotone == 0 && worst_final <= 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Outcome {
    let mut pairs = 0;
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    let mut r = rng(6);
    let mut seed = 0u64;
    while pairs < 200 {
        let m = make_random_cmdp(2 + (seed as usize % 4), 3, 1, 300 + seed).unwrap();
        seed += 1;
        let mut safe = Vec::new();
        let mut tries = 0;
        while safe.len() < 2 && tries < 10_000 {
            tries += 1;
            let p = random_params(&m, &mut r, 2.0).policy();
            if Returns::of(&m, &p).unwrap().is_safe(&m) {
                safe.push(p);
            }
        }
        if safe.len() < 2 {
            continue;
        }
        for f in [m.reward(), m.cost(0)] {
            let b = performance_difference_bound(&m, &safe[0], &safe[1], f).unwrap();
            if !b.holds(0.0) {
                violations += 1;
            }
            if b.bound > 0.0 {
                max_ratio = max_ratio.max(b.gap / b.bound);
            }
        }
        pairs += 1;
    }
    let detail = format!("{violations} violations over {pairs} pairs x 2 functions (max gap/bound {max_ratio:.3})");
    if violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for gen in [BarrierGenerator::LogBarrier, BarrierGenerator::Entropy] {
        for seed in 0..20u64 {
            let m = make_random_cmdp(2 + (seed as usize % 3), 2 + (seed as usize % 2), 1, 400 + seed).unwrap();
            let theta = sample_safe_init(&m, seed).unwrap();
            let pk = theta.policy();
            let model = LocalModel::exact(&m, &pk).unwrap();
            let budget = DivergenceBudget::broadcast(0.01, 1.0, 1).unwrap();
            let g = model.constrained_gramian(gen, &budget).unwrap();
            let f = |x: &[f64]| {
                model
                    .surrogate_divergence(&params(&m, x).policy(), gen, &budget)
                    .unwrap()
            };
            let h = fd_hessian(f, theta.as_slice(), 1e-4);
            let err = (&g - &h).norm() / g.norm();
            worst = worst.max(err);
            count += 1;
        }
    }
    let detail = format!("max relative Frobenius error {worst:.3e} over {count} pairs");
    if worst < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let m = make_random_cmdp(2 + (seed as usize % 4), 3, 1, 500 + seed).unwrap();
        let mut r = rng(seed);
        let theta = random_params(&m, &mut r, 1.5);
        let model = LocalModel::exact(&m, &theta.policy()).unwrap();
        let g = model.advantage_gradient(&model.reward_weight);
        let fd = fd_gradient(
            |x| Returns::of(&m, &params(&m, x).policy()).unwrap().reward,
            theta.as_slice(),
            1e-5,
        );
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    let detail = format!("max relative error {worst:.3e} over 20 parameter points");
    if worst < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let steps: Vec<f64> = (3..10).map(|k| 0.5f64.powi(k)).collect();
    let mut min_slope = f64::INFINITY;
    let mut runs = 0;
    for gen in [BarrierGenerator::LogBarrier, BarrierGenerator::Entropy] {
        for seed in 0..5u64 {
            let m = make_random_cmdp(3, 2, 1, 600 + seed).unwrap();
            let theta = sample_safe_init(&m, seed).unwrap();
            let pk = theta.policy();
            let model = LocalModel::exact(&m, &pk).unwrap();
            let budget = DivergenceBudget::broadcast(0.01, 1.0, 1).unwrap();
            let mut r = rng(seed);
            for _ in 0..4 {
                let u = random_direction(theta.dim(), &mut r);
                let errs: Vec<f64> = steps
                    .iter()
                    .map(|t| {
                        let p = theta.offset(&u, *t).policy();
                        let sur = model.surrogate_divergence(&p, gen, &budget).unwrap();
                        let exact = constrained_divergence_exact(&m, &p, &pk, gen, &budget).unwrap();
                        (sur - exact).abs()
                    })
                    .collect();
                min_slope = min_slope.min(log_log_slope(&steps, &errs));
                runs += 1;
            }
        }
    }
    let detail = format!("minimum log-log slope {min_slope:.3} over {runs} directions");
    if min_slope >= 2.7 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn crossings(trace: &TrainingTrace, b: f64) -> usize {
    trace.rows.iter().filter(|r| r.costs[0] > b).count()
}

fn criterion_10() -> Outcome {
    let m = make_two_state_env(0).unwrap();
    let b = m.thresholds()[0];
    let mut parts = Vec::new();
    let mut ok = true;
    for beta in [0.0, 1e-4, 1e-2, 1.0] {
        let config = AlgoConfig::default().with_beta(beta);
        let mut total = 0;
        for init in 0..10u64 {
            let theta0 = sample_safe_init(&m, init).unwrap();
            let trace = cnpg_flow(&m, &theta0, &config, 1e3).map_err(|e| e.to_string())?;
            total += crossings(&trace, b);
        }
        ok &= if beta == 0.0 { total >= 1 } else { total == 0 };
        parts.push(format!("beta={beta}: {total} crossing iterates"));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn base_run(sampling: Option<SamplingConfig>) -> RunConfig {
    RunConfig {
        env: EnvSpec::TwoState { seed: 0 },
        variant: Variant::Ctrpo,
        seed: 0,
        init: InitKind::Safe,
        cost_limit_scale: 1.0,
        algo: AlgoConfig {
            max_iters: 100,
            ..AlgoConfig::default()
        },
        sampling,
        out_dir: None,
    }
}

fn criterion_11() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let beta_spec = SweepSpec {
        parameter: SweepParam::Beta,
        values: vec![1e-2, 1e-1, 1.0],
        seeds: seeds.clone(),
        base: base_run(Some(SamplingConfig::default())),
    };
    let sweep = run_sweep(&beta_spec, ctrpo_core::lab::worker_count()).map_err(|e| e.to_string())?;
    if !sweep.failures().is_empty() {
        return Err(format!("{} beta cells failed", sweep.failures().len()));
    }
    let totals: Vec<f64> = beta_spec
        .values
        .iter()
        .map(|v| {
            seeds
                .iter()
                .map(|s| sweep.get(*v, *s).unwrap().outcome.as_ref().unwrap().trace.total_regret())
                .sum()
        })
        .collect();
    let monotone = totals.windows(2).all(|w| w[1] <= w[0]);

    let limit_spec = SweepSpec {
        parameter: SweepParam::CostLimit,
        values: vec![0.5, 1.0, 2.0],
        seeds: seeds.clone(),
        base: base_run(None),
    };
    let sweep = run_sweep(&limit_spec, ctrpo_core::lab::worker_count()).map_err(|e| e.to_string())?;
    if !sweep.failures().is_empty() {
        return Err(format!("{} cost-limit cells failed", sweep.failures().len()));
    }
    let limit_regret: Vec<f64> = limit_spec
        .values
        .iter()
        .map(|v| {
            seeds
                .iter()
                .map(|s| sweep.get(*v, *s).unwrap().outcome.as_ref().unwrap().trace.total_regret())
                .sum()
        })
        .collect();
    let satisfied = limit_regret.iter().all(|r| *r == 0.0);
    let detail = format!(
        "regret over beta {{1e-2, 1e-1, 1}} (sampled) = {:?}; regret over b x {{0.5, 1, 2}} (exact) = {:?}",
        totals.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
        limit_regret.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>()
    );
    if monotone && satisfied {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_12() -> Outcome {
    let m = make_random_cmdp(3, 2, 1, 11).unwrap();
    let theta_k = sample_safe_init(&m, 0).unwrap();
    let pk = theta_k.policy();
    let pi = theta_k.offset(&[0.15, -0.1, 0.05, 0.1, -0.15, 0.12], 1.0).policy();
    let gen = BarrierGenerator::LogBarrier;
    let budget = DivergenceBudget::broadcast(0.01, 1.0, 1).unwrap();
    let exact = LocalModel::exact(&m, &pk)
        .unwrap()
        .surrogate_divergence(&pi, gen, &budget)
        .unwrap();
    let cfg = SamplingConfig::default();
    let horizon = default_horizon(m.discount());
    let reps = 200u64;
    let mut rms = Vec::new();
    for episodes in [64usize, 256, 1024] {
        let mut se = 0.0;
        for rep in 0..reps {
            let batch = sample_trajectories(&m, &pk, episodes, horizon, (episodes as u64) << 20 | rep).unwrap();
            let d = estimate_surrogate_divergence(&m, &batch, &pi, &pk, gen, &budget, &cfg)
                .map_err(|e| e.to_string())?;
            se += (d - exact).powi(2);
        }
        rms.push((se / reps as f64).sqrt());
    }
    let ratios: Vec<f64> = rms.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| (2.0 / 1.6..=2.0 * 1.6).contains(r));
    let detail = format!(
        "exact {exact:.4e}, RMS at 64/256/1024 episodes = {:?}, ratios {:?}",
        rms.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
        ratios.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_13() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for seed in 0..50u64 {
        let ns = 1 + (seed as usize % 4);
        let na = 2 + (seed as usize % 2);
        let m = make_random_cmdp(ns.max(2), na, 1, 700 + seed).unwrap();
        let simplex = solve_constrained_lp(&m).map_err(|e| e.to_string())?.1;
        let oracle = vertex_enumeration(&m, true).ok_or("oracle found no vertex")?;
        let err = (simplex - oracle).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            mismatches += 1;
        }
    }
    let detail = format!("{mismatches} of 50 instances differ by > 1e-9 (max {worst:.3e})");
    if mismatches == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let mut corpus = Corpus {
        cmdps: Vec::new(),
        steps: Vec::new(),
    };
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "invariance under C-TRPO", criterion_1(&mut corpus)));
    results.push((2, "flow convergence to the LP optimum", criterion_2(&mut corpus)));
    results.push((3, "per-step cost increase bound", criterion_3(&corpus)));
    results.push((4, "per-step reward decrease bound", criterion_4(&corpus)));
    results.push((5, "small-beta limit matches CPO", criterion_5()));
    results.push((6, "performance-difference bound", criterion_6()));
    results.push((7, "Gramian equals surrogate Hessian", criterion_7()));
    results.push((8, "advantage gradient equals value gradient", criterion_8()));
    results.push((9, "surrogate agrees to second order", criterion_9()));
    results.push((10, "two-state trajectories stay safe", criterion_10()));
    results.push((11, "beta and cost-limit sweeps", criterion_11()));
    results.push((12, "sampled divergence Monte-Carlo rate", criterion_12()));
    results.push((13, "simplex matches vertex enumeration", criterion_13()));
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("PASS [{n:>2}] {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
