use super::{total_error_bound, wilson_interval, BoundParams, Z_95};
use crate::engine::{epochs_before_round, run_search, SearchConfig};
use crate::error::{Error, Result};
use crate::oracles::{EpochClock, NoiseParams, SyntheticLandscape, SyntheticOracle};
use crate::rng::{self, label};
use crate::scalar::Scalar;
use crate::space::{Architecture, SearchSpaceSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;

pub const CSV_HEADER: &str = "e_t,K,sigma,delta,bound_exact,bound_simplified,empirical_rate,ci_low,ci_high";

/// Relative gap between observed and modelled deviation above which a
/// run is flagged as misconfigured.
const DEVIATION_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig<T> {
    pub search: SearchConfig<T>,
    pub clock: EpochClock,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads for trials; 0 uses the global rayon pool.
    pub jobs: usize,
    /// Noise model the bound assumes; compared with what the trials observe.
    pub bound_noise: NoiseParams<T>,
    /// Largest space the optimum search may enumerate.
    pub enumeration_cap: u64,
}

/// Aggregates for one round across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    /// Operations per edge when the round starts.
    pub k: usize,
    /// Architecture-epochs completed at the end of the round.
    pub e_t: usize,
    /// Trials whose optimum was still intact when the round started.
    pub at_risk: usize,
    /// Trials that pruned an optimal operation in this round.
    pub mistakes: usize,
    /// Trials that pruned an optimal operation in this round or later.
    pub mistakes_from_here: usize,
    /// Root mean square of `metric - quality` over the round's observations.
    pub empirical_deviation: f64,
    /// Root mean square of the bound's `sigma(e_t)` over the same observations.
    pub model_deviation: f64,
}

impl RoundStats {
    pub fn mistake_rate(&self) -> f64 {
        ratio(self.mistakes, self.at_risk)
    }

    pub fn remaining_rate(&self) -> f64 {
        ratio(self.mistakes_from_here, self.at_risk)
    }

    pub fn deviation_mismatch(&self) -> bool {
        deviation_mismatch(self.empirical_deviation, self.model_deviation)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn deviation_mismatch(empirical: f64, model: f64) -> bool {
    if model == 0.0 {
        empirical > 1e-12
    } else {
        (empirical / model - 1.0).abs() > DEVIATION_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub errors: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub optimum: String,
    pub rounds: Vec<RoundStats>,
}

impl MonteCarloReport {
    pub fn deviation_mismatch(&self) -> bool {
        self.rounds.iter().any(RoundStats::deviation_mismatch)
    }
}

struct TrialOutcome {
    /// Index of the first round (0-based) that pruned an optimal operation.
    first_error: Option<usize>,
    /// Per round: (sum of squared metric errors, sum of squared model sigma, count).
    deviations: Vec<(f64, f64, usize)>,
}

fn run_trial<T: Scalar>(
    spec: &SearchSpaceSpec,
    landscape: &SyntheticLandscape<T>,
    config: &MonteCarloConfig<T>,
    optimum: &Architecture,
    trial: usize,
) -> Result<TrialOutcome> {
    let seed = rng::derive_seed(config.seed, label::TRIAL, &[trial as u64]);
    let search = SearchConfig {
        seed,
        jobs: 1,
        ..config.search.clone()
    };
    let mut oracle = SyntheticOracle::new(landscape.clone(), config.clock, seed);
    let result = run_search(spec, &mut oracle, &search)?;

    let first_error = result
        .prune_log
        .iter()
        .filter(|p| optimum.ops[p.flat_edge] == p.op)
        .map(|p| p.round)
        .min();

    let k0 = spec.num_ops();
    let t = search.epochs_per_round;
    let noise = &config.bound_noise;
    let mut own_epochs: HashMap<&Architecture, usize> = HashMap::new();
    let deviations = result
        .records
        .iter()
        .enumerate()
        .map(|(i, records)| {
            let k = result.k_per_round[i];
            let before = epochs_before_round(k0, t, i + 1);
            let mut acc = (0.0, 0.0, 0usize);
            for r in records {
                let e_t = match config.clock {
                    EpochClock::PerArchitecture => own_epochs.get(&r.architecture).copied().unwrap_or(0) + r.epoch,
                    EpochClock::Search => before + r.epoch * k,
                };
                let s = noise.sigma(e_t.clamp(1, noise.e_star)).expect("clamped").as_f64();
                let err = (r.metric - landscape.quality(&r.architecture)).as_f64();
                acc.0 += err * err;
                acc.1 += s * s;
                acc.2 += 1;
            }
            for r in records.iter().filter(|r| r.epoch == t) {
                *own_epochs.entry(&r.architecture).or_insert(0) += t;
            }
            acc
        })
        .collect();
    Ok(TrialOutcome {
        first_error,
        deviations,
    })
}

/// Runs `config.trials` independent searches on a separable landscape and
/// counts those that prune an operation of the brute-force optimum.
/// Results depend only on `(config, landscape)`, not on scheduling.
pub fn monte_carlo_error_rate<T: Scalar>(
    spec: &SearchSpaceSpec,
    landscape: &SyntheticLandscape<T>,
    config: &MonteCarloConfig<T>,
) -> Result<MonteCarloReport> {
    landscape.check_shape(spec)?;
    config.search.validate()?;
    config.bound_noise.validate()?;
    if config.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let (optimum, _) = landscape.optimum(spec, config.enumeration_cap)?;

    let run_all = || {
        (0..config.trials)
            .into_par_iter()
            .map(|i| run_trial(spec, landscape, config, &optimum, i))
            .collect::<Result<Vec<_>>>()
    };
    let outcomes = if config.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run_all)?
    } else {
        run_all()?
    };

    let k0 = spec.num_ops();
    let t = config.search.epochs_per_round;
    let num_rounds = k0 - 1;
    let rounds = (0..num_rounds)
        .map(|i| {
            let k = k0 - i;
            let at_risk = outcomes.iter().filter(|o| o.first_error.is_none_or(|r| r >= i)).count();
            let mistakes = outcomes.iter().filter(|o| o.first_error == Some(i)).count();
            let mistakes_from_here = outcomes
                .iter()
                .filter(|o| o.first_error.is_some_and(|r| r >= i))
                .count();
            let (sq, model, n) = outcomes.iter().fold((0.0, 0.0, 0usize), |acc, o| {
                let d = o.deviations.get(i).copied().unwrap_or((0.0, 0.0, 0));
                (acc.0 + d.0, acc.1 + d.1, acc.2 + d.2)
            });
            let rms = |s: f64| if n == 0 { 0.0 } else { (s / n as f64).sqrt() };
            RoundStats {
                round: i + 1,
                k,
                e_t: epochs_before_round(k0, t, i + 2),
                at_risk,
                mistakes,
                mistakes_from_here,
                empirical_deviation: rms(sq),
                model_deviation: rms(model),
            }
        })
        .collect();

    let errors = outcomes.iter().filter(|o| o.first_error.is_some()).count();
    let (ci_low, ci_high) = wilson_interval(errors, config.trials, Z_95);
    Ok(MonteCarloReport {
        trials: config.trials,
        errors,
        rate: errors as f64 / config.trials as f64,
        ci_low,
        ci_high,
        optimum: spec.encode(&optimum),
        rounds,
    })
}

/// One line of the bound CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub e_t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub delta: f64,
    pub bound_exact: f64,
    pub bound_simplified: f64,
    pub empirical_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl BoundRow {
    pub fn is_vacuous(&self) -> bool {
        self.bound_simplified >= 1.0
    }

    /// Upper confidence limit above a non-vacuous bound.
    pub fn upper_exceeds(&self) -> bool {
        !self.is_vacuous() && self.ci_high > self.bound_simplified
    }

    /// Lower confidence limit above a non-vacuous bound.
    pub fn violates(&self) -> bool {
        !self.is_vacuous() && self.ci_low > self.bound_simplified
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.e_t,
            self.k,
            self.sigma,
            self.delta,
            self.bound_exact,
            self.bound_simplified,
            self.empirical_rate,
            self.ci_low,
            self.ci_high
        )
    }
}

/// Pairs each round with the bound for the remaining search: `K` and `|O|`
/// are the operations alive when the round starts, `e_t` is the
/// architecture-epoch count at its end, and the empirical rate is the
/// fraction of trials still holding the optimum that lose it from this
/// round on.
pub fn bound_rows<T: Scalar>(report: &MonteCarloReport, params: &BoundParams<T>) -> Result<Vec<BoundRow>> {
    report
        .rounds
        .iter()
        .map(|r| {
            let p = params.with_ops_count(r.k);
            p.validate()?;
            let e_t = r.e_t.clamp(1, p.noise.e_star);
            let total = total_error_bound(&p, e_t, r.k)?;
            let (ci_low, ci_high) = wilson_interval(r.mistakes_from_here, r.at_risk, Z_95);
            Ok(BoundRow {
                e_t,
                k: r.k,
                sigma: super::sigma(&p, e_t)?.as_f64(),
                delta: super::delta_threshold(&p).as_f64(),
                bound_exact: total.exact.as_f64(),
                bound_simplified: total.simplified.as_f64(),
                empirical_rate: r.remaining_rate(),
                ci_low,
                ci_high,
            })
        })
        .collect()
}

pub fn write_bound_csv<W: Write>(mut out: W, rows: &[BoundRow]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    out.flush()?;
    Ok(())
}
