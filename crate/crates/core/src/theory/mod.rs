//! Error-rate bound of distribution pruning, in closed form and by Monte Carlo.
//!
//! The estimation error at epoch `e_t` has deviation
//! `sigma(e_t) = beta * (e_star - e_t) + gamma`; a prune is a mistake when
//! the error exceeds `delta(|O|) = zeta * exp(|O| - |O|*)`. Chebyshev gives
//! a per-round bound `(sigma / delta)^2`, and summing `(sigma / (n delta))^2`
//! over `n = 1..K` gives the total bound `(2 - 1/K) (sigma / delta)^2`,
//! itself below `2 (sigma / delta)^2`.

mod monte_carlo;

pub use monte_carlo::{
    bound_rows, monte_carlo_error_rate, write_bound_csv, BoundRow, MonteCarloConfig, MonteCarloReport, RoundStats,
    CSV_HEADER,
};

use crate::error::{Error, Result};
use crate::oracles::NoiseParams;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BoundParams<T> {
    pub noise: NoiseParams<T>,
    pub zeta: T,
    /// `|O|`, operations alive when the prune happens.
    pub ops_count: usize,
    /// `|O|*`, the largest `|O|` of the search.
    pub ops_count_max: usize,
}

impl<T: Scalar> BoundParams<T> {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if !(self.zeta > T::zero()) || !self.zeta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "zeta must be positive, got {}",
                self.zeta
            )));
        }
        if self.ops_count < 1 || self.ops_count > self.ops_count_max {
            return Err(Error::InvalidArgument(format!(
                "ops_count {} outside 1..={}",
                self.ops_count, self.ops_count_max
            )));
        }
        Ok(())
    }

    pub fn with_ops_count(&self, ops_count: usize) -> Self {
        Self {
            ops_count,
            ..self.clone()
        }
    }
}

/// `beta * (e_star - e_t) + gamma`, for `1 <= e_t <= e_star`.
pub fn sigma<T: Scalar>(params: &BoundParams<T>, e_t: usize) -> Result<T> {
    params.noise.sigma(e_t)
}

/// `zeta * exp(|O| - |O|*)`.
pub fn delta_threshold<T: Scalar>(params: &BoundParams<T>) -> T {
    let exponent = params.ops_count as f64 - params.ops_count_max as f64;
    params.zeta * T::of(exponent).exp()
}

/// Chebyshev bound `(sigma / delta)^2` of one pruning step. Values `>= 1`
/// are vacuous and returned unclamped.
pub fn single_round_bound<T: Scalar>(params: &BoundParams<T>, e_t: usize) -> Result<T> {
    let ratio = sigma(params, e_t)? / delta_threshold(params);
    Ok(ratio * ratio)
}

/// Total bound over `K` pruning steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TotalBound<T> {
    /// `(2 - 1/K) (sigma / delta)^2`
    pub exact: T,
    /// `2 (sigma / delta)^2`
    pub simplified: T,
}

impl<T: Scalar> TotalBound<T> {
    pub fn is_vacuous(&self) -> bool {
        self.simplified >= T::one()
    }
}

pub fn total_error_bound<T: Scalar>(params: &BoundParams<T>, e_t: usize, k: usize) -> Result<TotalBound<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let single = single_round_bound(params, e_t)?;
    let two = T::of(2.0);
    Ok(TotalBound {
        exact: (two - T::one() / T::of_usize(k)) * single,
        simplified: two * single,
    })
}

/// `sum_{n=1..K} 1/n^2`, the factor the telescoping step bounds by `2 - 1/K`.
pub fn inverse_square_partial_sum<T: Scalar>(k: usize) -> T {
    (1..=k).map(|n| T::one() / T::of_usize(n * n)).sum()
}

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}
