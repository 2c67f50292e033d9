//! Finite-sample estimates of the quantities the update rules consume.
//!
//! Episodes run for a fixed horizon from `mu` and are truncated, not
//! terminated, so the last step of each episode bootstraps from the critic.
//! The discounted occupancy is estimated by weighting step `t` of every
//! episode with `(1 - gamma) gamma^t / episodes`, which makes weighted sums
//! unbiased for `d_pi` up to the truncated tail `gamma^horizon`.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{value_bundle, Policy, TabularCmdp};
use crate::error::{Error, Result};
use crate::geometry::{BarrierGenerator, DivergenceBudget, LocalModel};

/// Flat, column-oriented transitions of a batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub horizon: usize,
    pub seed: u64,
    pub count: usize,
    pub discount: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub episode: Vec<usize>,
    pub step: Vec<usize>,
    pub state: Vec<usize>,
    pub action: Vec<usize>,
    pub reward: Vec<f64>,
    /// `costs[i][j]` is cost `i` of transition `j`.
    pub costs: Vec<Vec<f64>>,
    pub next_state: Vec<usize>,
    pub done: Vec<bool>,
}

/// Smallest horizon whose discounted tail `gamma^H` is below `1e-8`.
pub fn default_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ((1e-8f64).ln() / gamma.ln()).ceil() as usize
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn num_costs(&self) -> usize {
        self.costs.len()
    }

    /// Occupancy weight `(1 - gamma) gamma^t / count` of each transition.
    pub fn weights(&self) -> Vec<f64> {
        let g = self.discount;
        self.step
            .iter()
            .map(|&t| (1.0 - g) * g.powi(t as i32) / self.count as f64)
            .collect()
    }

    pub fn signal(&self, f: Signal) -> Result<&[f64]> {
        match f {
            Signal::Reward => Ok(&self.reward),
            Signal::Cost(i) => self
                .costs
                .get(i)
                .map(|v| v.as_slice())
                .ok_or_else(|| Error::InvalidArgument(format!("batch has no cost {i}"))),
        }
    }

    /// Compact text form: a header line, then one whitespace-separated line
    /// per column.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "ctrpo-batch v1 count={} horizon={} seed={} discount={} states={} actions={} costs={}",
            self.count,
            self.horizon,
            self.seed,
            self.discount,
            self.num_states,
            self.num_actions,
            self.costs.len()
        );
        fn line<T: std::fmt::Display>(out: &mut String, name: &str, v: &[T]) {
            out.push_str(name);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        line(&mut out, "episode", &self.episode);
        line(&mut out, "step", &self.step);
        line(&mut out, "state", &self.state);
        line(&mut out, "action", &self.action);
        line(&mut out, "reward", &self.reward);
        for (i, c) in self.costs.iter().enumerate() {
            line(&mut out, &format!("cost{i}"), c);
        }
        line(&mut out, "next_state", &self.next_state);
        let done: Vec<u8> = self.done.iter().map(|d| *d as u8).collect();
        line(&mut out, "done", &done);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("batch text: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("ctrpo-batch") || fields.next() != Some("v1") {
            return Err(bad("missing header".into()));
        }
        let mut get = |key: &str| -> Result<String> {
            let f = fields.next().ok_or_else(|| bad(format!("missing {key}")))?;
            f.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected {key}=")))
        };
        let num = |s: String| s.parse::<usize>().map_err(|e| bad(e.to_string()));
        let count = num(get("count")?)?;
        let horizon = num(get("horizon")?)?;
        let seed = get("seed")?.parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let discount = get("discount")?.parse::<f64>().map_err(|e| bad(e.to_string()))?;
        let num_states = num(get("states")?)?;
        let num_actions = num(get("actions")?)?;
        let m = num(get("costs")?)?;
        let mut column = |name: &str| -> Result<Vec<String>> {
            let l = lines.next().ok_or_else(|| bad(format!("missing column {name}")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(bad(format!("expected column {name}")));
            }
            Ok(it.map(str::to_string).collect())
        };
        fn parse<T: std::str::FromStr>(v: Vec<String>) -> Result<Vec<T>> {
            v.iter()
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|_| Error::InvalidArgument(format!("batch text: bad value {s}")))
                })
                .collect()
        }
        let episode = parse(column("episode")?)?;
        let step = parse(column("step")?)?;
        let state = parse(column("state")?)?;
        let action = parse(column("action")?)?;
        let reward = parse(column("reward")?)?;
        let mut costs = Vec::with_capacity(m);
        for i in 0..m {
            costs.push(parse(column(&format!("cost{i}"))?)?);
        }
        let next_state = parse(column("next_state")?)?;
        let done: Vec<u8> = parse(column("done")?)?;
        let b = TrajectoryBatch {
            horizon,
            seed,
            count,
            discount,
            num_states,
            num_actions,
            episode,
            step,
            state,
            action,
            reward,
            costs,
            next_state,
            done: done.into_iter().map(|d| d != 0).collect(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state.len();
        let lens = [
            self.episode.len(),
            self.step.len(),
            self.action.len(),
            self.reward.len(),
            self.next_state.len(),
            self.done.len(),
        ];
        if lens.iter().any(|l| *l != n) || self.costs.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("batch columns differ in length".into()));
        }
        if self.state.iter().chain(&self.next_state).any(|s| *s >= self.num_states)
            || self.action.iter().any(|a| *a >= self.num_actions)
        {
            return Err(Error::InvalidArgument("batch index out of range".into()));
        }
        if self.step.iter().any(|t| *t >= self.horizon) {
            return Err(Error::InvalidArgument("episode longer than horizon".into()));
        }
        Ok(())
    }
}

/// Which function of the transitions an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Reward,
    Cost(usize),
}

fn categorical(p: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p).map_err(|e| Error::Numerical(format!("sampling distribution: {e}")))
}

/// `episodes` independent rollouts of `pi`, each exactly `horizon` steps.
pub fn sample_trajectories(
    cmdp: &TabularCmdp,
    pi: &Policy,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if horizon == 0 || episodes == 0 {
        return Err(Error::InvalidArgument("episodes and horizon must be positive".into()));
    }
    let (ns, na) = (cmdp.num_states(), cmdp.num_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = categorical(cmdp.initial_dist())?;
    let act: Vec<_> = (0..ns).map(|s| categorical(pi.row(s))).collect::<Result<_>>()?;
    let trans: Vec<_> = (0..ns * na)
        .map(|j| categorical(cmdp.next_dist(j / na, j % na)))
        .collect::<Result<_>>()?;
    let n = episodes * horizon;
    let m = cmdp.num_constraints();
    let mut b = TrajectoryBatch {
        horizon,
        seed,
        count: episodes,
        discount: cmdp.discount(),
        num_states: ns,
        num_actions: na,
        episode: Vec::with_capacity(n),
        step: Vec::with_capacity(n),
        state: Vec::with_capacity(n),
        action: Vec::with_capacity(n),
        reward: Vec::with_capacity(n),
        costs: vec![Vec::with_capacity(n); m],
        next_state: Vec::with_capacity(n),
        done: Vec::with_capacity(n),
    };
    for e in 0..episodes {
        let mut s = init.sample(&mut rng);
        for t in 0..horizon {
            let a = act[s].sample(&mut rng);
            let sp = trans[s * na + a].sample(&mut rng);
            b.episode.push(e);
            b.step.push(t);
            b.state.push(s);
            b.action.push(a);
            b.reward.push(cmdp.reward()[s * na + a]);
            for (i, c) in b.costs.iter_mut().enumerate() {
                c.push(cmdp.cost(i)[s * na + a]);
            }
            b.next_state.push(sp);
            b.done.push(t + 1 == horizon);
            s = sp;
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaeEstimate {
    pub adv_hat: Vec<f64>,
    pub value_targets: Vec<f64>,
    pub lambda: f64,
    pub signal: Signal,
}

/// GAE-lambda over every episode of `batch` with residual
/// `(1 - gamma) f_t + gamma V(s_{t+1}) - V(s_t)`. Episode ends are
/// truncations, so the final residual bootstraps from `V(s_H)`.
pub fn gae_advantages(
    batch: &TrajectoryBatch,
    value_fn: &[f64],
    signal: Signal,
    gamma: f64,
    lambda: f64,
) -> Result<GaeEstimate> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if value_fn.len() != batch.num_states {
        return Err(Error::InvalidArgument("value function has wrong length".into()));
    }
    let f = batch.signal(signal)?;
    let n = batch.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for j in (0..n).rev() {
        let last_of_episode = j + 1 == n || batch.episode[j + 1] != batch.episode[j];
        if last_of_episode {
            acc = 0.0;
        }
        let delta = (1.0 - gamma) * f[j] + gamma * value_fn[batch.next_state[j]] - value_fn[batch.state[j]];
        acc = delta + gamma * lambda * acc;
        adv[j] = acc;
    }
    let value_targets = adv
        .iter()
        .zip(&batch.state)
        .map(|(a, s)| a + value_fn[*s])
        .collect();
    Ok(GaeEstimate {
        adv_hat: adv,
        value_targets,
        lambda,
        signal,
    })
}

/// Tabular Monte-Carlo critic: per-state mean of normalized discounted
/// returns-to-go, using only steps in the first half of each episode so the
/// truncated tail stays below `gamma^{H/2}`. Unvisited states get the global
/// mean.
pub fn monte_carlo_values(batch: &TrajectoryBatch, signal: Signal) -> Result<Vec<f64>> {
    let f = batch.signal(signal)?;
    let g = batch.discount;
    let n = batch.len();
    let mut ret = vec![0.0; n];
    let mut acc = 0.0;
    for j in (0..n).rev() {
        if j + 1 == n || batch.episode[j + 1] != batch.episode[j] {
            acc = 0.0;
        }
        acc = (1.0 - g) * f[j] + g * acc;
        ret[j] = acc;
    }
    let cutoff = batch.horizon.div_ceil(2);
    let mut sum = vec![0.0; batch.num_states];
    let mut cnt = vec![0usize; batch.num_states];
    for j in 0..n {
        if batch.step[j] < cutoff {
            sum[batch.state[j]] += ret[j];
            cnt[batch.state[j]] += 1;
        }
    }
    let total: usize = cnt.iter().sum();
    let mean = if total > 0 { sum.iter().sum::<f64>() / total as f64 } else { 0.0 };
    Ok(sum
        .iter()
        .zip(&cnt)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { mean })
        .collect())
}

/// How `V_c(pi_k)` (hence the margin `b - V_c`) is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginEstimator {
    /// Mean GAE value target at `t = 0`.
    ValueTargets,
    /// Mean normalized discounted return of each episode.
    RawReturns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Critic {
    MonteCarlo,
    /// True value function; removes critic error in tests.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub episodes: usize,
    /// Zero selects `default_horizon(gamma)`.
    pub horizon: usize,
    pub lambda: f64,
    pub margin: MarginEstimator,
    pub critic: Critic,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            episodes: 64,
            horizon: 0,
            lambda: 0.95,
            margin: MarginEstimator::ValueTargets,
            critic: Critic::MonteCarlo,
        }
    }
}

/// Everything estimated from one batch for one signal.
struct SignalEstimate {
    gae: GaeEstimate,
    value: f64,
}

fn estimate_signal(
    cmdp: &TabularCmdp,
    pi: &Policy,
    batch: &TrajectoryBatch,
    signal: Signal,
    cfg: &SamplingConfig,
) -> Result<SignalEstimate> {
    let v = match cfg.critic {
        Critic::MonteCarlo => monte_carlo_values(batch, signal)?,
        Critic::Exact => {
            let f = match signal {
                Signal::Reward => cmdp.reward(),
                Signal::Cost(i) => cmdp.cost(i),
            };
            value_bundle(cmdp, pi, f)?.v
        }
    };
    let gae = gae_advantages(batch, &v, signal, batch.discount, cfg.lambda)?;
    let starts: Vec<usize> = (0..batch.len()).filter(|&j| batch.step[j] == 0).collect();
    let value = match cfg.margin {
        MarginEstimator::ValueTargets => {
            starts.iter().map(|&j| gae.value_targets[j]).sum::<f64>() / starts.len() as f64
        }
        MarginEstimator::RawReturns => {
            let f = batch.signal(signal)?;
            let g = batch.discount;
            let w: Vec<f64> = batch.step.iter().map(|&t| (1.0 - g) * g.powi(t as i32)).collect();
            f.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / batch.count as f64
        }
    };
    Ok(SignalEstimate { gae, value })
}

/// Empirical local model: state weights from discounted visit counts and
/// advantage weights `W(s, a) = sum_{j at (s,a)} w_j A_hat_j / pi_k(a|s)`,
/// which turns the importance-weighted, centred advantage estimate into the
/// same linear form as the exact model.
pub fn local_model_from_batch(
    cmdp: &TabularCmdp,
    pi_k: &Policy,
    batch: &TrajectoryBatch,
    cfg: &SamplingConfig,
) -> Result<LocalModel> {
    let na = batch.num_actions;
    let w = batch.weights();
    let mut state_weight = vec![0.0; batch.num_states];
    for (j, s) in batch.state.iter().enumerate() {
        state_weight[*s] += w[j];
    }
    let weight_table = |gae: &GaeEstimate| -> Vec<f64> {
        let mut table = vec![0.0; batch.num_states * na];
        for j in 0..batch.len() {
            let (s, a) = (batch.state[j], batch.action[j]);
            table[s * na + a] += w[j] * gae.adv_hat[j] / pi_k.prob(s, a);
        }
        table
    };
    let r = estimate_signal(cmdp, pi_k, batch, Signal::Reward, cfg)?;
    let mut cost_weights = Vec::new();
    let mut cost_values = Vec::new();
    for i in 0..batch.num_costs() {
        let e = estimate_signal(cmdp, pi_k, batch, Signal::Cost(i), cfg)?;
        cost_weights.push(weight_table(&e.gae));
        cost_values.push(e.value);
    }
    let margins = cmdp
        .thresholds()
        .iter()
        .zip(&cost_values)
        .map(|(b, v)| b - v)
        .collect();
    Ok(LocalModel {
        gamma: batch.discount,
        policy: pi_k.clone(),
        state_weight,
        reward_weight: weight_table(&r.gae),
        cost_weights,
        margins,
        reward_value: r.value,
        cost_values,
    })
}

/// Samples a batch from `pi_k` and builds its empirical local model.
pub fn estimate_local_model(
    cmdp: &TabularCmdp,
    pi_k: &Policy,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<LocalModel> {
    let horizon = if cfg.horizon == 0 { default_horizon(cmdp.discount()) } else { cfg.horizon };
    let batch = sample_trajectories(cmdp, pi_k, cfg.episodes, horizon, seed)?;
    local_model_from_batch(cmdp, pi_k, &batch, cfg)
}

/// Sample estimate of the surrogate divergence
/// `sum_j w_j KL(pi(.|s_j) || pi_k(.|s_j)) + sum_i beta_i Psi(A_hat_i)` with
/// estimated margins `margin_hat`.
pub fn estimate_surrogate_divergence(
    cmdp: &TabularCmdp,
    batch: &TrajectoryBatch,
    pi: &Policy,
    pi_k: &Policy,
    gen: BarrierGenerator,
    budget: &DivergenceBudget,
    cfg: &SamplingConfig,
) -> Result<f64> {
    let model = local_model_from_batch(cmdp, pi_k, batch, cfg)?;
    model.surrogate_divergence(pi, gen, budget)
}

/// The entropy-generator barrier term in closed form,
/// `A - (margin - A) ln(margin / (margin - A))`.
pub fn entropy_barrier_closed_form(margin: f64, adv: f64) -> f64 {
    adv - (margin - adv) * (margin / (margin - adv)).ln()
}
