//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ctrpo_core::geometry::SoftmaxParams;
use ctrpo_core::{Policy, TabularCmdp};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best objective over all basic feasible solutions of
/// `max r^T d  s.t.  flow(d) = (1 - gamma) mu,  c_i^T d + t_i = b_i,  d, t >= 0`,
/// or `None` when no basis is feasible. `with_costs = false` drops the cost rows.
pub fn vertex_enumeration(cmdp: &TabularCmdp, with_costs: bool) -> Option<f64> {
    let (ns, na) = (cmdp.num_states(), cmdp.num_actions());
    let m = if with_costs { cmdp.num_constraints() } else { 0 };
    let nd = ns * na;
    let nvar = nd + m;
    let rows = ns + m;
    let gamma = cmdp.discount();
    let mut a = DMatrix::<f64>::zeros(rows, nvar);
    let mut rhs = DVector::<f64>::zeros(rows);
    for s in 0..ns {
        rhs[s] = (1.0 - gamma) * cmdp.initial_dist()[s];
        for sp in 0..ns {
            for ap in 0..na {
                let mut coef = if sp == s { 1.0 } else { 0.0 };
                coef -= gamma * cmdp.next_dist(sp, ap)[s];
                a[(s, sp * na + ap)] = coef;
            }
        }
    }
    for i in 0..m {
        for j in 0..nd {
            a[(ns + i, j)] = cmdp.cost(i)[j];
        }
        a[(ns + i, nd + i)] = 1.0;
        rhs[ns + i] = cmdp.thresholds()[i];
    }
    let mut best: Option<f64> = None;
    let mut basis: Vec<usize> = (0..rows).collect();
    loop {
        let sub = DMatrix::from_fn(rows, rows, |r, c| a[(r, basis[c])]);
        if sub.determinant().abs() > 1e-12 {
            if let Some(x) = sub.lu().solve(&rhs) {
                if x.iter().all(|v| *v >= -1e-11) {
                    let value: f64 = basis
                        .iter()
                        .zip(x.iter())
                        .filter(|(j, _)| **j < nd)
                        .map(|(j, v)| cmdp.reward()[*j] * v)
                        .sum();
                    best = Some(best.map_or(value, |b: f64| b.max(value)));
                }
            }
        }
        // next combination in lexicographic order
        let mut i = rows;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if basis[i] != i + nvar - rows {
                break;
            }
        }
        basis[i] += 1;
        for j in i + 1..rows {
            basis[j] = basis[j - 1] + 1;
        }
    }
}

/// `V_f(mu)` by summing `(1 - gamma) gamma^t mu^T P_pi^t f_pi` for `t < horizon`.
pub fn power_series_value(cmdp: &TabularCmdp, pi: &Policy, f: &[f64], horizon: usize) -> Vec<f64> {
    let (ns, na) = (cmdp.num_states(), cmdp.num_actions());
    let gamma = cmdp.discount();
    let mut p = DMatrix::<f64>::zeros(ns, ns);
    let mut fpi = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            fpi[s] += pi.prob(s, a) * f[s * na + a];
            for (sp, q) in cmdp.next_dist(s, a).iter().enumerate() {
                p[(s, sp)] += pi.prob(s, a) * q;
            }
        }
    }
    let mut v = DVector::<f64>::zeros(ns);
    let mut term = fpi * (1.0 - gamma);
    for _ in 0..horizon {
        v += &term;
        term = (&p * term) * gamma;
    }
    v.iter().copied().collect()
}

/// Logits with entries uniform in `[-scale, scale]`.
pub fn random_params(cmdp: &TabularCmdp, rng: &mut ChaCha8Rng, scale: f64) -> SoftmaxParams {
    let theta = (0..cmdp.dim()).map(|_| rng.random_range(-scale..scale)).collect();
    SoftmaxParams::new(cmdp.num_states(), cmdp.num_actions(), theta).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit vector with Gaussian-like entries.
pub fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Central finite-difference Hessian of `f` at `x`.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let at = |i: usize, si: f64, j: usize, sj: f64| {
        let mut y = x.to_vec();
        y[i] += si * h;
        y[j] += sj * h;
        f(&y)
    };
    DMatrix::from_fn(n, n, |i, j| {
        (at(i, 1.0, j, 1.0) - at(i, 1.0, j, -1.0) - at(i, -1.0, j, 1.0) + at(i, -1.0, j, -1.0)) / (4.0 * h * h)
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}
