//! Seeded environment generators and initial-policy samplers.
//!
//! Thresholds are placed between the minimum achievable cost and the cost of
//! the unconstrained optimum, so the constraint is active at the constrained
//! optimum and the safe set has a nonempty interior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::cmdp::{occupancy, policy_from_occupancy, OccupancyMeasure, Provenance, Returns, TabularCmdp};
use crate::error::{Error, Result};
use crate::geometry::softmax::SoftmaxParams;
use crate::lp::{max_slack_occupancy, min_cost, solve_constrained_lp, solve_unconstrained_lp, LinearProgram, flow_constraints};

pub const DEFAULT_DISCOUNT: f64 = 0.9;
pub const MAX_ATTEMPTS: usize = 1000;
/// Required interior slack of the safe set.
pub const MIN_SLACK: f64 = 0.01;
const MIN_SPREAD: f64 = 0.05;

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// Full-support initial distribution: half Dirichlet, half uniform.
fn initial_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut mu: Vec<f64> = dirichlet_row(rng, n)
        .into_iter()
        .map(|p| 0.5 * p + 0.5 / n as f64)
        .collect();
    let z: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= z);
    mu
}

/// Picks `b_i = c_min + u (c_unc - c_min)` with `u ~ U[0.3, 0.7]`. Returns
/// `None` when some constraint has too little spread to be interesting, unless
/// `allow_inactive`, in which case such constraints get `c_min + MIN_SPREAD`.
fn calibrate_thresholds(
    base: &TabularCmdp,
    rng: &mut ChaCha8Rng,
    allow_inactive: bool,
) -> Result<Option<TabularCmdp>> {
    let (d_unc, _) = solve_unconstrained_lp(base)?;
    let mut b = Vec::with_capacity(base.num_constraints());
    for i in 0..base.num_constraints() {
        let (_, lo) = min_cost(base, i)?;
        let hi = d_unc.dot(base.cost(i));
        let spread = hi - lo;
        let u: f64 = rng.random_range(0.3..0.7);
        if spread < MIN_SPREAD {
            if !allow_inactive {
                return Ok(None);
            }
            b.push(lo + MIN_SPREAD);
        } else {
            b.push(lo + u * spread);
        }
    }
    let m = base.with_thresholds(b)?;
    match crate::lp::safe_set_slack(&m) {
        Ok(t) if t >= MIN_SLACK => {}
        _ => return Ok(None),
    }
    if solve_constrained_lp(&m).is_err() {
        return Ok(None);
    }
    Ok(Some(m))
}

fn generation_error(reason: &str) -> Error {
    Error::Generation {
        attempts: MAX_ATTEMPTS,
        reason: reason.into(),
    }
}

/// Random CMDP with Dirichlet transitions, uniform rewards and costs in
/// `[0, 1]`, full-support `mu` and `gamma = 0.9`.
pub fn make_random_cmdp(
    num_states: usize,
    num_actions: usize,
    num_costs: usize,
    seed: u64,
) -> Result<TabularCmdp> {
    if num_states == 0 || num_actions == 0 || num_costs == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na) = (num_states, num_actions);
    for _ in 0..MAX_ATTEMPTS {
        let transition: Vec<f64> = (0..ns * na).flat_map(|_| dirichlet_row(&mut rng, ns)).collect();
        let reward: Vec<f64> = (0..ns * na).map(|_| rng.random::<f64>()).collect();
        let costs: Vec<Vec<f64>> = (0..num_costs)
            .map(|_| (0..ns * na).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mu = initial_dist(&mut rng, ns);
        let base = TabularCmdp::new(
            ns,
            na,
            transition,
            reward,
            costs,
            vec![1.0; num_costs],
            DEFAULT_DISCOUNT,
            mu,
        )?;
        if let Some(m) = calibrate_thresholds(&base, &mut rng, false)? {
            return Ok(m.with_provenance(Provenance {
                generator: "random".into(),
                seed,
                params: Some(format!(
                    "{{\"num_states\":{ns},\"num_actions\":{na},\"num_costs\":{num_costs}}}"
                )),
            }));
        }
    }
    Err(generation_error("no sample produced a safe set with enough interior slack"))
}

/// Two states, two actions. Action 0 is free and low-reward, action 1 earns
/// more but pays a cost; the threshold forces a mixture.
pub fn make_two_state_env(seed: u64) -> Result<TabularCmdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let transition: Vec<f64> = (0..4).flat_map(|_| dirichlet_row(&mut rng, 2)).collect();
        let mut reward = vec![0.0; 4];
        let mut cost = vec![0.0; 4];
        for s in 0..2 {
            reward[s * 2] = rng.random_range(0.0..0.4);
            reward[s * 2 + 1] = rng.random_range(0.6..1.0);
            cost[s * 2 + 1] = rng.random_range(0.5..1.0);
        }
        let mu = initial_dist(&mut rng, 2);
        let base = TabularCmdp::new(2, 2, transition, reward, vec![cost], vec![1.0], DEFAULT_DISCOUNT, mu)?;
        if let Some(m) = calibrate_thresholds(&base, &mut rng, false)? {
            return Ok(m.with_provenance(Provenance {
                generator: "two_state".into(),
                seed,
                params: None,
            }));
        }
    }
    Err(generation_error("two-state instance never had an active constraint"))
}

/// Slippery gridworld. State `y * width + x`; actions up, down, left, right.
/// Each move slips to a uniformly random direction with probability 0.1.
/// The goal (top-right) is absorbing and pays reward 1 per step; the start is
/// bottom-left. Every listed `(x, y)` cell charges a seeded cost in
/// `[0.5, 1]` per step spent there.
pub fn make_gridworld(
    width: usize,
    height: usize,
    cost_cells: &[(usize, usize)],
    seed: u64,
) -> Result<TabularCmdp> {
    if width == 0 || height == 0 || width * height < 2 {
        return Err(Error::InvalidArgument("gridworld needs at least two cells".into()));
    }
    if let Some(c) = cost_cells.iter().find(|(x, y)| *x >= width || *y >= height) {
        return Err(Error::InvalidArgument(format!("cost cell {c:?} outside the grid")));
    }
    const SLIP: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = width * height;
    let na = 4;
    let goal = ns - 1;
    let start = 0;
    let step = |s: usize, dir: usize| -> usize {
        let (x, y) = (s % width, s / width);
        let (nx, ny) = match dir {
            0 if y + 1 < height => (x, y + 1),
            1 if y > 0 => (x, y - 1),
            2 if x > 0 => (x - 1, y),
            3 if x + 1 < width => (x + 1, y),
            _ => (x, y),
        };
        ny * width + nx
    };
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
            if s == goal {
                row[s] = 1.0;
                reward[s * na + a] = 1.0;
                continue;
            }
            row[step(s, a)] += 1.0 - SLIP;
            for dir in 0..4 {
                row[step(s, dir)] += SLIP / 4.0;
            }
        }
    }
    let mut cost = vec![0.0; ns * na];
    for &(x, y) in cost_cells {
        let w: f64 = rng.random_range(0.5..1.0);
        let s = y * width + x;
        cost[s * na..(s + 1) * na].iter_mut().for_each(|c| *c = w);
    }
    let mut mu = vec![0.1 / ns as f64; ns];
    mu[start] += 0.9;
    let base = TabularCmdp::new(ns, na, transition, reward, vec![cost], vec![1.0], DEFAULT_DISCOUNT, mu)?;
    let m = calibrate_thresholds(&base, &mut rng, true)?
        .ok_or_else(|| generation_error("gridworld safe set has no interior"))?;
    Ok(m.with_provenance(Provenance {
        generator: "gridworld".into(),
        seed,
        params: Some(format!(
            "{{\"width\":{width},\"height\":{height},\"cost_cells\":{cost_cells:?}}}"
        )),
    }))
}

fn mix(a: &OccupancyMeasure, b: &OccupancyMeasure, t: f64) -> Result<OccupancyMeasure> {
    let d = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect();
    OccupancyMeasure::new(a.num_states(), a.num_actions(), d)
}

fn random_logits(cmdp: &TabularCmdp, rng: &mut ChaCha8Rng, scale: f64) -> SoftmaxParams {
    let t = (0..cmdp.dim())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SoftmaxParams::new(cmdp.num_states(), cmdp.num_actions(), t).expect("finite logits")
}

/// Random strictly safe softmax parameters: every margin is at least a tenth
/// of the largest achievable common slack.
pub fn sample_safe_init(cmdp: &TabularCmdp, seed: u64) -> Result<SoftmaxParams> {
    let (d_slack, t_star) = max_slack_occupancy(cmdp)?;
    if !(t_star > 0.0) {
        return Err(Error::Infeasible);
    }
    let need = 0.1 * t_star;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..200 {
        let th = random_logits(cmdp, &mut rng, 1.0);
        let margins = Returns::of(cmdp, &th.policy())?.margins(cmdp);
        if margins.iter().all(|m| *m >= need) {
            return Ok(th);
        }
        last = Some(th);
    }
    // Pull the last draw toward the max-slack occupancy; costs are linear in
    // d, so the required mixing weight is exact.
    let base = occupancy(cmdp, &last.expect("at least one draw").policy())?;
    let target = 0.5 * t_star;
    let margins: Vec<f64> = cmdp
        .costs()
        .iter()
        .zip(cmdp.thresholds())
        .map(|(c, b)| b - base.dot(c))
        .collect();
    let t = margins
        .iter()
        .filter(|m| **m < target)
        .map(|m| (target - m) / (t_star - m))
        .fold(0.0, f64::max)
        .min(0.999);
    let d = mix(&base, &d_slack, t)?;
    Ok(SoftmaxParams::from_policy(&policy_from_occupancy(&d)?))
}

/// Random parameters violating some constraint by at least a tenth of the
/// safe set's slack.
pub fn sample_unsafe_init(cmdp: &TabularCmdp, seed: u64) -> Result<SoftmaxParams> {
    let t_star = crate::lp::safe_set_slack(cmdp)?.max(MIN_SLACK);
    let need = -0.1 * t_star;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..200 {
        let th = random_logits(cmdp, &mut rng, 1.5);
        let margins = Returns::of(cmdp, &th.policy())?.margins(cmdp);
        if margins.iter().any(|m| *m <= need) {
            return Ok(th);
        }
        last = Some(th);
    }
    // Push toward the occupancy with the largest first-constraint cost.
    let mut lp = LinearProgram::maximize(cmdp.cost(0).to_vec());
    for (row, rhs) in flow_constraints(cmdp) {
        lp.add_eq(row, rhs);
    }
    let sol = lp.solve()?;
    let d_max = OccupancyMeasure::new(cmdp.num_states(), cmdp.num_actions(), sol.x)?;
    let b = cmdp.thresholds()[0];
    let target = b - 2.0 * need;
    if sol.value <= target {
        return Err(Error::Generation {
            attempts: 200,
            reason: "no policy violates the constraint by the required amount".into(),
        });
    }
    let base = occupancy(cmdp, &last.expect("at least one draw").policy())?;
    let c0 = base.dot(cmdp.cost(0));
    let t = ((target - c0) / (sol.value - c0)).clamp(0.0, 0.999);
    let d = mix(&base, &d_max, t)?;
    Ok(SoftmaxParams::from_policy(&policy_from_occupancy(&d)?))
}
