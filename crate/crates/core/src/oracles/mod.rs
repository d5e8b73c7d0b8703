//! Evaluators: a synthetic noisy landscape, a tabular benchmark and a
//! micro weight-sharing supernet.

pub mod data;
pub mod supernet;
pub mod synthetic;
pub mod tabular;

pub use supernet::{MicroOp, MicroSupernet, SupernetConfig};
pub use synthetic::{EpochClock, Interaction, SyntheticLandscape, SyntheticOracle};
pub use tabular::{generate_benchmark, TabularBenchmark, TabularOracle};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Early-training deviation model: `sigma(e_t) = beta * (e_star - e_t) + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NoiseParams<T> {
    pub beta: T,
    pub gamma: T,
    pub e_star: usize,
}

impl<T: Scalar> NoiseParams<T> {
    pub fn noiseless(e_star: usize) -> Self {
        Self {
            beta: T::zero(),
            gamma: T::zero(),
            e_star,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e_star < 1 {
            return Err(Error::InvalidArgument("e_star must be at least 1".into()));
        }
        if !(self.beta >= T::zero()) || !(self.gamma >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "beta ({}) and gamma ({}) must be non-negative",
                self.beta, self.gamma
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, e_t: usize) -> Result<T> {
        if e_t < 1 || e_t > self.e_star {
            return Err(Error::InvalidArgument(format!(
                "e_t = {e_t} outside 1..={}",
                self.e_star
            )));
        }
        Ok(self.beta * T::of_usize(self.e_star - e_t) + self.gamma)
    }

    pub fn is_noiseless(&self) -> bool {
        self.beta == T::zero() && self.gamma == T::zero()
    }
}
