use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lab::trace::{violation, TrainingTrace};

/// Strong cost regret `sum_k sum_i [V_{c_i}(pi_k) - b_i]_+` over every
/// recorded iterate, recomputed from the rows.
pub fn cost_regret(trace: &TrainingTrace, thresholds: &[f64]) -> Result<f64> {
    if trace.rows.is_empty() {
        return Err(Error::InvalidArgument("cost regret of an empty trace".into()));
    }
    Ok(trace.rows.iter().map(|r| violation(&r.costs, thresholds)).sum())
}

/// Interquartile mean: the mean of the middle half of the sorted values.
///
/// When `n` is not a multiple of four, the two boundary order statistics
/// enter with fractional weight so that exactly `n / 2` units of mass are
/// averaged; for `n` divisible by four this is the plain trimmed mean of the
/// middle `n / 2` points.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "interquartile mean needs at least 4 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("interquartile mean of non-finite values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    // deviations from a central order statistic, so constant input is exact
    let center = v[v.len() / 2];
    let mut total = 0.0;
    for (i, x) in v.iter().enumerate() {
        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        total += w * (x - center);
    }
    Ok(center + total / (n / 2.0))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Percentile bootstrap interval for the IQM at confidence `level`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    stratified_bootstrap_ci(&[values.to_vec()], level, resamples, seed)
}

/// Percentile bootstrap interval for the IQM of the pooled strata, resampling
/// each stratum (e.g. each environment) independently with replacement.
pub fn stratified_bootstrap_ci(
    strata: &[Vec<f64>],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    if resamples == 0 || strata.is_empty() || strata.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument("bootstrap needs data and resamples".into()));
    }
    let pooled: Vec<f64> = strata.iter().flatten().copied().collect();
    iqm(&pooled)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = Vec::with_capacity(pooled.len());
    for _ in 0..resamples {
        buf.clear();
        for s in strata {
            for _ in 0..s.len() {
                buf.push(s[rng.random_range(0..s.len())]);
            }
        }
        stats.push(iqm(&buf)?);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((percentile(&stats, tail), percentile(&stats, 1.0 - tail)))
}

/// Reward over the unconstrained optimum and costs over their thresholds,
/// for aggregating across environments.
pub fn normalized_scores(reward: f64, costs: &[f64], reward_opt: f64, thresholds: &[f64]) -> (f64, Vec<f64>) {
    (
        reward / reward_opt,
        costs.iter().zip(thresholds).map(|(c, b)| c / b).collect(),
    )
}
