use super::NoiseParams;
use crate::engine::{EpochContext, Evaluator};
use crate::error::{Error, EvalError, Result};
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;
use crate::space::{Architecture, EdgeKey, SearchSpaceSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

/// Pairwise term added when both (edge, op) choices are present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction<T> {
    pub first: (usize, usize),
    pub second: (usize, usize),
    pub value: T,
}

/// Known performance landscape over a search space.
///
/// True quality of an architecture is the mean of its per-edge utilities
/// plus the mean of the interaction terms it activates, clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLandscape<T> {
    /// `utilities[flat_edge][op]`
    pub utilities: Vec<Vec<T>>,
    pub interactions: Vec<Interaction<T>>,
    pub noise: NoiseParams<T>,
    /// Clamp observed metrics to `[0, 1]`. Off gives the pure additive model.
    pub clamp_metric: bool,
}

impl<T: Scalar> SyntheticLandscape<T> {
    pub fn separable(utilities: Vec<Vec<T>>, noise: NoiseParams<T>) -> Self {
        Self {
            utilities,
            interactions: Vec::new(),
            noise,
            clamp_metric: true,
        }
    }

    /// Per edge, `K` evenly spaced utilities in `[low, high]` in random order.
    pub fn random_separable<R: Rng + ?Sized>(
        spec: &SearchSpaceSpec,
        noise: NoiseParams<T>,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Self {
        let k = spec.num_ops();
        let utilities = (0..spec.num_flat_edges())
            .map(|_| {
                let mut row: Vec<T> = (0..k)
                    .map(|i| T::of(low + (high - low) * i as f64 / (k - 1) as f64))
                    .collect();
                row.shuffle(rng);
                row
            })
            .collect();
        Self::separable(utilities, noise)
    }

    pub fn check_shape(&self, spec: &SearchSpaceSpec) -> Result<()> {
        if self.utilities.len() != spec.num_flat_edges() || self.utilities.iter().any(|row| row.len() != spec.num_ops())
        {
            return Err(Error::Landscape(format!(
                "utility table must be {} edges x {} operations",
                spec.num_flat_edges(),
                spec.num_ops()
            )));
        }
        for i in &self.interactions {
            for (e, o) in [i.first, i.second] {
                if e >= spec.num_flat_edges() || o >= spec.num_ops() {
                    return Err(Error::Landscape(format!("interaction references ({e}, {o})")));
                }
            }
        }
        self.noise.validate()
    }

    pub fn quality(&self, arch: &Architecture) -> T {
        let n = arch.ops.len();
        let base: T = arch
            .ops
            .iter()
            .enumerate()
            .map(|(e, &o)| self.utilities[e][o])
            .sum::<T>()
            / T::of_usize(n);
        let active: Vec<T> = self
            .interactions
            .iter()
            .filter(|i| arch.ops[i.first.0] == i.first.1 && arch.ops[i.second.0] == i.second.1)
            .map(|i| i.value)
            .collect();
        let extra = if active.is_empty() {
            T::zero()
        } else {
            active.iter().copied().sum::<T>() / T::of_usize(active.len())
        };
        (base + extra).max(T::zero()).min(T::one())
    }

    /// Observed metric at epoch `e_t`: quality plus zero-mean normal noise
    /// of deviation `sigma(e_t)`.
    pub fn observe<R: Rng + ?Sized>(&self, arch: &Architecture, e_t: usize, rng: &mut R) -> T {
        let q = self.quality(arch);
        let e_t = e_t.clamp(1, self.noise.e_star);
        let sigma = self.noise.sigma(e_t).expect("e_t clamped into range");
        if sigma == T::zero() {
            return q;
        }
        let z: f64 = rng.sample(StandardNormal);
        let m = q + sigma * T::of(z);
        if self.clamp_metric {
            m.max(T::zero()).min(T::one())
        } else {
            m
        }
    }

    /// Smallest per-edge gap between the best and second-best utility.
    pub fn min_utility_gap(&self) -> T {
        self.utilities
            .iter()
            .map(|row| {
                let mut sorted = row.clone();
                sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite utilities"));
                sorted[0] - sorted[1]
            })
            .fold(T::infinity(), T::min)
    }

    /// Quality lost by swapping one optimal operation for its runner-up,
    /// minimized over edges (separable landscapes).
    pub fn min_quality_gap(&self) -> T {
        self.min_utility_gap() / T::of_usize(self.utilities.len())
    }

    /// Brute-force optimum over the enumerable space.
    pub fn optimum(&self, spec: &SearchSpaceSpec, cap: u64) -> Result<(Architecture, T)> {
        let mut best: Option<(Architecture, T)> = None;
        let mut tied = false;
        for arch in spec.enumerate(cap)? {
            let q = self.quality(&arch);
            match &best {
                Some((_, b)) if q < *b => {}
                Some((_, b)) if q == *b => tied = true,
                _ => {
                    best = Some((arch, q));
                    tied = false;
                }
            }
        }
        let (arch, q) = best.expect("space is non-empty");
        if tied {
            return Err(Error::NonUniqueOptimum(format!(
                "several architectures reach quality {q}"
            )));
        }
        Ok((arch, q))
    }

    pub fn load(path: &Path, spec: &SearchSpaceSpec) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, spec)
    }

    pub fn save(&self, path: &Path, spec: &SearchSpaceSpec) -> Result<()> {
        std::fs::write(path, self.to_toml(spec)?)?;
        Ok(())
    }

    pub fn from_toml(text: &str, spec: &SearchSpaceSpec) -> Result<Self> {
        let file: LandscapeFile = toml::from_str(text).map_err(|e| Error::Landscape(e.to_string()))?;
        let mut utilities = vec![vec![None; spec.num_ops()]; spec.num_flat_edges()];
        for (edge, ops) in &file.utilities {
            let key: EdgeKey = edge.parse()?;
            let flat = spec
                .flat_index(&key)
                .ok_or_else(|| Error::Landscape(format!("unknown edge `{edge}`")))?;
            for (op, &value) in ops {
                let o = spec
                    .op_index(op)
                    .ok_or_else(|| Error::Landscape(format!("unknown operation `{op}`")))?;
                utilities[flat][o] = Some(T::of(value));
            }
        }
        let utilities = utilities
            .into_iter()
            .enumerate()
            .map(|(flat, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(o, u)| {
                        u.ok_or_else(|| {
                            Error::Landscape(format!(
                                "missing utility for {}={}",
                                spec.edge_key(flat),
                                spec.op_name(o)
                            ))
                        })
                    })
                    .collect::<Result<Vec<T>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let choice = |s: &str| -> Result<(usize, usize)> {
            let (edge, op) = s
                .split_once('=')
                .ok_or_else(|| Error::Landscape(format!("interaction term `{s}` lacks `=`")))?;
            let key: EdgeKey = edge.parse()?;
            let flat = spec
                .flat_index(&key)
                .ok_or_else(|| Error::Landscape(format!("unknown edge `{edge}`")))?;
            let o = spec
                .op_index(op)
                .ok_or_else(|| Error::Landscape(format!("unknown operation `{op}`")))?;
            Ok((flat, o))
        };
        let interactions = file
            .interactions
            .iter()
            .map(|i| {
                Ok(Interaction {
                    first: choice(&i.first)?,
                    second: choice(&i.second)?,
                    value: T::of(i.value),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let landscape = Self {
            utilities,
            interactions,
            noise: NoiseParams {
                beta: T::of(file.noise.beta),
                gamma: T::of(file.noise.gamma),
                e_star: file.noise.e_star,
            },
            clamp_metric: file.clamp,
        };
        landscape.check_shape(spec)?;
        Ok(landscape)
    }

    pub fn to_toml(&self, spec: &SearchSpaceSpec) -> Result<String> {
        let utilities = self
            .utilities
            .iter()
            .enumerate()
            .map(|(flat, row)| {
                let ops = row
                    .iter()
                    .enumerate()
                    .map(|(o, u)| (spec.op_name(o).to_string(), u.as_f64()))
                    .collect();
                (spec.edge_key(flat).to_string(), ops)
            })
            .collect();
        let render = |(e, o): (usize, usize)| format!("{}={}", spec.edge_key(e), spec.op_name(o));
        let file = LandscapeFile {
            clamp: self.clamp_metric,
            noise: NoiseFile {
                beta: self.noise.beta.as_f64(),
                gamma: self.noise.gamma.as_f64(),
                e_star: self.noise.e_star,
            },
            utilities,
            interactions: self
                .interactions
                .iter()
                .map(|i| InteractionFile {
                    first: render(i.first),
                    second: render(i.second),
                    value: i.value.as_f64(),
                })
                .collect(),
        };
        toml::to_string(&file).map_err(|e| Error::Landscape(e.to_string()))
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct LandscapeFile {
    #[serde(default = "default_true")]
    clamp: bool,
    noise: NoiseFile,
    utilities: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    interactions: Vec<InteractionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NoiseFile {
    beta: f64,
    gamma: f64,
    e_star: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct InteractionFile {
    first: String,
    second: String,
    value: f64,
}

/// Which epoch index feeds the deviation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpochClock {
    /// Each architecture counts its own training epochs.
    #[default]
    PerArchitecture,
    /// Search progress in architecture-epochs, shared by all architectures.
    Search,
}

/// Evaluator over a [`SyntheticLandscape`].
#[derive(Debug)]
pub struct SyntheticOracle<T> {
    pub landscape: SyntheticLandscape<T>,
    pub clock: EpochClock,
    seed: u64,
    counters: Mutex<HashMap<Architecture, usize>>,
}

impl<T: Scalar> SyntheticOracle<T> {
    pub fn new(landscape: SyntheticLandscape<T>, clock: EpochClock, seed: u64) -> Self {
        Self {
            landscape,
            clock,
            seed,
            counters: Mutex::new(HashMap::new()),
        }
    }

    /// Epochs this architecture has trained so far.
    pub fn epochs_trained(&self, arch: &Architecture) -> usize {
        self.counters
            .lock()
            .expect("counter lock")
            .get(arch)
            .copied()
            .unwrap_or(0)
    }

    fn noise_rng(&self, ctx: &EpochContext) -> StreamRng {
        rng::substream(self.seed, rng::label::ORACLE, &[ctx.stream_seed, ctx.epoch as u64])
    }
}

impl<T: Scalar> Evaluator<T> for SyntheticOracle<T> {
    fn train_epoch(&self, ctx: &EpochContext, arch: &Architecture) -> Result<T, EvalError> {
        if arch.ops.len() != self.landscape.utilities.len() {
            return Err(EvalError::InvalidArchitecture(format!(
                "{} edges, landscape has {}",
                arch.ops.len(),
                self.landscape.utilities.len()
            )));
        }
        let own = {
            let mut counters = self.counters.lock().expect("counter lock");
            let c = counters.entry(arch.clone()).or_insert(0);
            *c = (*c + 1).min(self.landscape.noise.e_star);
            *c
        };
        let e_t = match self.clock {
            EpochClock::PerArchitecture => own,
            EpochClock::Search => ctx.search_epoch,
        };
        Ok(self.landscape.observe(arch, e_t, &mut self.noise_rng(ctx)))
    }

    fn description(&self) -> String {
        let n = &self.landscape.noise;
        format!(
            "synthetic landscape ({} edges, beta={}, gamma={}, e_star={}, clock={:?})",
            self.landscape.utilities.len(),
            n.beta,
            n.gamma,
            n.e_star,
            self.clock
        )
    }

    fn supports_concurrency(&self) -> bool {
        true
    }
}
