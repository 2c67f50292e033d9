use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convex generator `phi` on `(0, inf)` for the barrier part of the mirror
/// function.
///
/// `LogBarrier` is `-ln x`, whose derivative diverges to `+inf` at zero.
/// `Entropy` is `x ln x`; its derivative diverges to `-inf` instead and
/// `phi(0+) = 0` is finite, so it does not make the boundary unreachable on
/// its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierGenerator {
    LogBarrier,
    Entropy,
}

impl BarrierGenerator {
    pub fn name(self) -> &'static str {
        match self {
            BarrierGenerator::LogBarrier => "log_barrier",
            BarrierGenerator::Entropy => "entropy",
        }
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            BarrierGenerator::LogBarrier => -x.ln(),
            BarrierGenerator::Entropy => {
                if x == 0.0 {
                    0.0
                } else {
                    x * x.ln()
                }
            }
        }
    }

    pub fn d1(self, x: f64) -> f64 {
        match self {
            BarrierGenerator::LogBarrier => -1.0 / x,
            BarrierGenerator::Entropy => x.ln() + 1.0,
        }
    }

    pub fn d2(self, x: f64) -> f64 {
        match self {
            BarrierGenerator::LogBarrier => 1.0 / (x * x),
            BarrierGenerator::Entropy => 1.0 / x,
        }
    }

    /// Bregman remainder `phi(x1) - phi(x2) - phi'(x2) (x1 - x2)`.
    pub fn bregman(self, x1: f64, x2: f64) -> f64 {
        self.value(x1) - self.value(x2) - self.d1(x2) * (x1 - x2)
    }

    /// `Psi(x) = phi(delta_b - x) - phi(delta_b) + phi'(delta_b) x`.
    ///
    /// Convex and increasing on `[0, delta_b)` with `Psi(0) = Psi'(0) = 0`
    /// and `Psi''(0) = phi''(delta_b)`. Negative arguments are allowed and
    /// give the mirrored Bregman remainder.
    pub fn psi(self, delta_b: f64, x: f64) -> Result<f64> {
        if !(delta_b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must be positive, got {delta_b}"
            )));
        }
        if !(x < delta_b) {
            return Err(Error::BarrierDomain {
                constraint: 0,
                advantage: x,
                margin: delta_b,
            });
        }
        Ok(self.psi_unchecked(delta_b, x))
    }

    /// `Psi` written with `ln_1p` so small arguments keep full precision.
    fn psi_unchecked(self, delta_b: f64, x: f64) -> f64 {
        let u = x / delta_b;
        match self {
            BarrierGenerator::LogBarrier => -(-u).ln_1p() - u,
            BarrierGenerator::Entropy => {
                if u == 1.0 {
                    x
                } else {
                    (delta_b - x) * (-u).ln_1p() + x
                }
            }
        }
    }

    /// Supremum of `Psi` on `[0, delta_b)`: infinite for the log barrier,
    /// `delta_b` for the entropy generator.
    pub fn psi_sup(self, delta_b: f64) -> f64 {
        match self {
            BarrierGenerator::LogBarrier => f64::INFINITY,
            BarrierGenerator::Entropy => delta_b,
        }
    }

    /// Inverse of `Psi` on `[0, delta_b)` by bisection.
    ///
    /// Levels at or above `psi_sup` have no preimage; they saturate at
    /// `delta_b`, which is still a valid upper bound on the cost advantage of
    /// any point in the domain.
    pub fn psi_inverse(self, delta_b: f64, y: f64) -> Result<f64> {
        if !(delta_b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must be positive, got {delta_b}"
            )));
        }
        if !(y >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "level must be nonnegative, got {y}"
            )));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        if y >= self.psi_sup(delta_b) {
            return Ok(delta_b);
        }
        let (mut lo, mut hi) = (0.0, delta_b);
        while hi - lo > 1e-12 * delta_b.max(1e-300) {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.psi_unchecked(delta_b, mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

impl fmt::Display for BarrierGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BarrierGenerator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_barrier" => Ok(BarrierGenerator::LogBarrier),
            "entropy" => Ok(BarrierGenerator::Entropy),
            other => Err(Error::Config {
                key: "generator".into(),
                message: format!("unknown generator `{other}` (expected log_barrier or entropy)"),
            }),
        }
    }
}
