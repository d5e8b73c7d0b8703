//! Synthetic 2-D binary classification data for the micro supernet.

use crate::rng::StreamRng;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Two Gaussian blobs at `(-1.5, 0)` and `(1.5, 0)`, deviation 0.5.
    Blobs,
    /// Uniform points in a disk of radius 2; class 1 outside radius 1.2.
    #[default]
    Ring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x 2` inputs.
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Fraction of the most frequent class.
    pub fn majority_rate(&self) -> f64 {
        let ones = self.y.iter().filter(|&&c| c == 1).count();
        ones.max(self.len() - ones) as f64 / self.len() as f64
    }
}

pub const RING_RADIUS: f64 = 1.2;

fn generate(kind: DatasetKind, n: usize, rng: &mut StreamRng) -> Dataset {
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b, c) = match kind {
            DatasetKind::Blobs => {
                let c = i % 2;
                let cx = if c == 0 { -1.5 } else { 1.5 };
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                (cx + 0.5 * dx, 0.5 * dy, c)
            }
            DatasetKind::Ring => {
                let r = 2.0 * rng.random::<f64>().sqrt();
                let theta = std::f64::consts::TAU * rng.random::<f64>();
                (r * theta.cos(), r * theta.sin(), usize::from(r > RING_RADIUS))
            }
        };
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        y.push(c);
    }
    Dataset { x, y }
}

/// Train and validation splits drawn from one stream.
pub fn train_val_split(kind: DatasetKind, n_train: usize, n_val: usize, rng: &mut StreamRng) -> (Dataset, Dataset) {
    let train = generate(kind, n_train, rng);
    let val = generate(kind, n_val, rng);
    (train, val)
}
