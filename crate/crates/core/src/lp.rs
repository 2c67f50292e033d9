//! Dense two-phase simplex and the occupancy-measure linear programs.
//!
//! Problems here have at most a few dozen variables, so the solver keeps a
//! full tableau and uses Bland's rule throughout, which rules out cycling on
//! the heavily degenerate vertices of the state-action polytope.

use crate::cmdp::{OccupancyMeasure, TabularCmdp};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

/// `maximize c^T x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    eq: Vec<(Vec<f64>, f64)>,
    le: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            eq: Vec::new(),
            le: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars());
        self.eq.push((coeffs, rhs));
        self
    }

    pub fn add_le(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars());
        self.le.push((coeffs, rhs));
        self
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.num_vars();
        let n_slack = self.le.len();
        let rows: Vec<(Vec<f64>, f64)> = self
            .le
            .iter()
            .enumerate()
            .map(|(k, (c, b))| {
                let mut row = c.clone();
                row.resize(n + n_slack, 0.0);
                row[n + k] = 1.0;
                (row, *b)
            })
            .chain(self.eq.iter().map(|(c, b)| {
                let mut row = c.clone();
                row.resize(n + n_slack, 0.0);
                (row, *b)
            }))
            .collect();
        let mut cost = self.objective.clone();
        cost.resize(n + n_slack, 0.0);
        let mut t = Tableau::new(rows, n + n_slack);
        t.phase_one()?;
        let value = t.phase_two(&cost)?;
        let mut x = t.primal();
        x.truncate(n);
        Ok(LpSolution { x, value })
    }
}

struct Tableau {
    /// rows x (cols + 1); the last column is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Structural (non-artificial) columns come first.
    n_struct: usize,
    n_cols: usize,
}

impl Tableau {
    fn new(rows: Vec<(Vec<f64>, f64)>, n_struct: usize) -> Self {
        let m = rows.len();
        let n_cols = n_struct + m;
        let mut a = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        for (i, (coeffs, rhs)) in rows.into_iter().enumerate() {
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            let mut row: Vec<f64> = coeffs.into_iter().map(|v| sign * v).collect();
            row.resize(n_cols + 1, 0.0);
            row[n_struct + i] = 1.0;
            row[n_cols] = sign * rhs;
            a.push(row);
            basis.push(n_struct + i);
        }
        Tableau {
            a,
            basis,
            n_struct,
            n_cols,
        }
    }

    fn rhs(&self, i: usize) -> f64 {
        self.a[i][self.n_cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        self.a[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Bland's rule simplex over columns `< allowed`, maximizing `cost^T x`.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.a)
                        .map(|(&b, row)| cost[b] * row[j])
                        .sum::<f64>();
                reduced > COST_TOL
            });
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.a.len() {
                let aij = self.a[i][c];
                if aij > PIVOT_TOL {
                    let ratio = self.rhs(i) / aij;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-14
                                || ((ratio - best).abs() <= 1e-14 && self.basis[i] < self.basis[k])
                            {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(r, c);
        }
        Err(Error::Numerical("simplex pivot limit reached".into()))
    }

    fn phase_one(&mut self) -> Result<()> {
        let mut cost = vec![0.0; self.n_cols];
        cost[self.n_struct..].iter_mut().for_each(|v| *v = -1.0);
        self.optimize(&cost, self.n_cols)?;
        let infeasibility: f64 = (0..self.a.len())
            .filter(|&i| self.basis[i] >= self.n_struct)
            .map(|i| self.rhs(i))
            .sum();
        if infeasibility > FEAS_TOL {
            return Err(Error::Infeasible);
        }
        // Drive zero-level artificials out; drop rows that are redundant.
        let mut i = 0;
        while i < self.a.len() {
            if self.basis[i] >= self.n_struct {
                let col = (0..self.n_struct)
                    .find(|&j| !self.basis.contains(&j) && self.a[i][j].abs() > 1e-9);
                match col {
                    Some(j) => self.pivot(i, j),
                    None => {
                        self.a.remove(i);
                        self.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        Ok(())
    }

    fn phase_two(&mut self, cost: &[f64]) -> Result<f64> {
        let mut full = cost.to_vec();
        full.resize(self.n_cols, 0.0);
        self.optimize(&full, self.n_struct)?;
        Ok(self
            .basis
            .iter()
            .enumerate()
            .map(|(i, &b)| full[b] * self.rhs(i))
            .sum())
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_struct];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        x
    }
}

/// Bellman flow rows `l_s(d) = 0` as `(coefficients, rhs)` over `d[s * A + a]`.
pub fn flow_constraints(cmdp: &TabularCmdp) -> Vec<(Vec<f64>, f64)> {
    let (ns, na) = (cmdp.num_states(), cmdp.num_actions());
    let gamma = cmdp.discount();
    (0..ns)
        .map(|s| {
            let mut row = vec![0.0; ns * na];
            for sp in 0..ns {
                for ap in 0..na {
                    let own = if sp == s { 1.0 } else { 0.0 };
                    row[sp * na + ap] = own - gamma * cmdp.next_dist(sp, ap)[s];
                }
            }
            (row, (1.0 - gamma) * cmdp.initial_dist()[s])
        })
        .collect()
}

fn occupancy_lp(cmdp: &TabularCmdp, objective: Vec<f64>) -> LinearProgram {
    let mut lp = LinearProgram::maximize(objective);
    for (row, rhs) in flow_constraints(cmdp) {
        lp.add_eq(row, rhs);
    }
    lp
}

fn to_occupancy(cmdp: &TabularCmdp, x: Vec<f64>) -> Result<OccupancyMeasure> {
    OccupancyMeasure::new(cmdp.num_states(), cmdp.num_actions(), x)
}

/// `max r^T d` over the safe occupancy set. The ground-truth oracle for
/// convergence tests.
pub fn solve_constrained_lp(cmdp: &TabularCmdp) -> Result<(OccupancyMeasure, f64)> {
    let mut lp = occupancy_lp(cmdp, cmdp.reward().to_vec());
    for (c, b) in cmdp.costs().iter().zip(cmdp.thresholds()) {
        lp.add_le(c.clone(), *b);
    }
    let sol = lp.solve()?;
    Ok((to_occupancy(cmdp, sol.x)?, sol.value))
}

/// `max r^T d` over the whole polytope, ignoring costs.
pub fn solve_unconstrained_lp(cmdp: &TabularCmdp) -> Result<(OccupancyMeasure, f64)> {
    let sol = occupancy_lp(cmdp, cmdp.reward().to_vec()).solve()?;
    Ok((to_occupancy(cmdp, sol.x)?, sol.value))
}

/// `min c_i^T d` over the polytope.
pub fn min_cost(cmdp: &TabularCmdp, i: usize) -> Result<(OccupancyMeasure, f64)> {
    let neg: Vec<f64> = cmdp.cost(i).iter().map(|v| -v).collect();
    let sol = occupancy_lp(cmdp, neg).solve()?;
    Ok((to_occupancy(cmdp, sol.x)?, -sol.value))
}

/// Largest `t` such that some occupancy satisfies `c_i^T d + t <= b_i` for all
/// `i`. Positive iff the safe set has nonempty interior.
pub fn safe_set_slack(cmdp: &TabularCmdp) -> Result<f64> {
    Ok(max_slack_occupancy(cmdp)?.1)
}

/// The occupancy attaining `safe_set_slack`, with the slack.
pub fn max_slack_occupancy(cmdp: &TabularCmdp) -> Result<(OccupancyMeasure, f64)> {
    let dim = cmdp.dim();
    // variables: d (dim), t_plus, t_minus
    let mut obj = vec![0.0; dim + 2];
    obj[dim] = 1.0;
    obj[dim + 1] = -1.0;
    let mut lp = LinearProgram::maximize(obj);
    for (mut row, rhs) in flow_constraints(cmdp) {
        row.extend([0.0, 0.0]);
        lp.add_eq(row, rhs);
    }
    for (c, b) in cmdp.costs().iter().zip(cmdp.thresholds()) {
        let mut row = c.clone();
        row.extend([1.0, -1.0]);
        lp.add_le(row, *b);
    }
    let mut sol = lp.solve()?;
    sol.x.truncate(dim);
    Ok((to_occupancy(cmdp, sol.x)?, sol.value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.add_le(vec![1.0, 0.0], 4.0)
            .add_le(vec![0.0, 2.0], 12.0)
            .add_le(vec![3.0, 2.0], 18.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.add_le(vec![1.0], -1.0);
        assert_eq!(lp.solve(), Err(Error::Infeasible));
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.add_eq(vec![1.0, -1.0], 0.0);
        assert_eq!(lp.solve(), Err(Error::Unbounded));
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0).add_eq(vec![2.0, 2.0], 2.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_constraint_matches_unconstrained() {
        let m = crate::envs::make_random_cmdp(4, 3, 1, 2).unwrap();
        let (_, unc) = solve_unconstrained_lp(&m).unwrap();
        let (_, cmax) = min_cost(&m, 0).map(|(d, _)| d).and_then(|_| {
            let neg = m.clone();
            let (d, _) = solve_unconstrained_lp(&neg)?;
            Ok((d.clone(), d.dot(m.cost(0))))
        }).unwrap();
        let loose = m.with_thresholds(vec![cmax + 1.0]).unwrap();
        let (_, val) = solve_constrained_lp(&loose).unwrap();
        assert!((val - unc).abs() < 1e-10);
    }

    #[test]
    fn threshold_below_min_cost_is_infeasible() {
        let m = crate::envs::make_random_cmdp(3, 2, 1, 5).unwrap();
        let (_, lo) = min_cost(&m, 0).unwrap();
        let tight = m.with_thresholds(vec![lo - 0.05]).unwrap();
        assert_eq!(solve_constrained_lp(&tight).map(|r| r.1), Err(Error::Infeasible));
        assert!(safe_set_slack(&tight).unwrap() < 0.0);
    }

    #[test]
    fn lp_solution_is_an_occupancy() {
        let m = crate::envs::make_random_cmdp(4, 2, 1, 11).unwrap();
        let (d, val) = solve_constrained_lp(&m).unwrap();
        assert!(d.flow_residual(&m).iter().all(|r| r.abs() < 1e-10));
        assert!((d.values().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(d.dot(m.cost(0)) <= m.thresholds()[0] + 1e-10);
        assert!((d.dot(m.reward()) - val).abs() < 1e-10);
    }
}
