//! The pruning search loop.
//!
//! While more than one operation is alive per edge: disjointly sample `K`
//! architectures, train each for `T` epochs through the [`Evaluator`],
//! score the alive operations, apply the softmax update and prune the least
//! probable operation on every edge.

use crate::distribution::{CategoricalState, PruneEvent, StateSnapshot};
use crate::error::{Error, EvalError, Result};
use crate::estimator::{estimate_scores, EvaluationRecord, ScoreTable};
use crate::rng::{self, label, StreamRng};
use crate::scalar::Scalar;
use crate::space::{Architecture, SearchSpaceSpec};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SearchConfig<T> {
    /// Training epochs per sampled architecture per round.
    pub epochs_per_round: usize,
    pub temperature: T,
    pub ema_coeff: Option<T>,
    pub seed: u64,
    /// Write a checkpoint every this many rounds; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub direction: MetricDirection,
    /// Upper bound on concurrent `train_epoch` calls.
    pub jobs: usize,
}

impl<T: Scalar> Default for SearchConfig<T> {
    fn default() -> Self {
        Self {
            epochs_per_round: 3,
            temperature: T::of(crate::distribution::DEFAULT_TEMPERATURE),
            ema_coeff: None,
            seed: 0,
            checkpoint_every: 1,
            direction: MetricDirection::Maximize,
            jobs: 1,
        }
    }
}

impl<T: Scalar> SearchConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_round == 0 {
            return Err(Error::InvalidArgument("epochs_per_round must be at least 1".into()));
        }
        if !(self.temperature > T::zero()) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(c) = self.ema_coeff {
            if !(c > T::zero() && c <= T::one()) {
                return Err(Error::InvalidArgument(format!("ema_coeff {c} outside (0, 1]")));
            }
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Total architecture-epochs of a full search: `T * (K0(K0+1)/2 - 1)`.
pub fn total_epoch_budget(initial_k: usize, epochs_per_round: usize) -> usize {
    epochs_per_round * (initial_k * (initial_k + 1) / 2 - 1)
}

/// Architecture-epochs completed before `round` (1-based) starts.
pub fn epochs_before_round(initial_k: usize, epochs_per_round: usize, round: usize) -> usize {
    (1..round).map(|r| (initial_k + 1 - r) * epochs_per_round).sum()
}

/// Announced to the evaluator before a round's training starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundInfo {
    /// 1-based round number.
    pub round: usize,
    /// Architectures sampled this round.
    pub k: usize,
    pub epochs_per_round: usize,
    pub epochs_before: usize,
    /// Architecture-epochs of the whole search (cosine horizon).
    pub total_epoch_budget: usize,
}

/// Identifies one `train_epoch` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochContext {
    pub round: usize,
    pub slot: usize,
    /// Epoch within the round, `1..=T`.
    pub epoch: usize,
    /// Search progress in architecture-epochs once this epoch has run for
    /// every slot of the round. Independent of scheduling.
    pub search_epoch: usize,
    /// Seed of the `(seed, round, slot)` substream owned by this architecture.
    pub stream_seed: u64,
}

impl EpochContext {
    /// Random stream private to this (round, slot, epoch).
    pub fn rng(&self) -> StreamRng {
        rng::substream(self.stream_seed, "epoch", &[self.epoch as u64])
    }
}

/// Something that trains sampled architectures and reports validation metrics.
pub trait Evaluator<T: Scalar>: Send + Sync {
    /// Announces the architectures of a new round.
    fn begin_round(&mut self, _info: &RoundInfo, _architectures: &[Architecture]) -> Result<(), EvalError> {
        Ok(())
    }

    /// Advances `arch` by one epoch and returns its validation metric.
    fn train_epoch(&self, ctx: &EpochContext, arch: &Architecture) -> Result<T, EvalError>;

    fn description(&self) -> String;

    /// Whether `train_epoch` may run concurrently for distinct slots.
    fn supports_concurrency(&self) -> bool {
        false
    }
}

/// One line of the JSONL event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Event<T> {
    RoundStart {
        round: usize,
        k: usize,
    },
    Sample {
        round: usize,
        slot: usize,
        arch: String,
    },
    Epoch {
        round: usize,
        slot: usize,
        epoch: usize,
        metric: T,
    },
    Scores {
        round: usize,
        edge: String,
        op: String,
        score: T,
    },
    Update {
        round: usize,
        edge: String,
        ops: Vec<String>,
        probs: Vec<T>,
    },
    Prune {
        round: usize,
        edge: String,
        op: String,
        prob: T,
    },
    Final {
        arch: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SearchResult<T> {
    pub final_architecture: Architecture,
    pub final_encoded: String,
    pub prune_log: Vec<PruneEvent<T>>,
    pub score_history: Vec<ScoreTable<T>>,
    /// Raw (undirected) metrics per round.
    pub records: Vec<Vec<EvaluationRecord<T>>>,
    pub k_per_round: Vec<usize>,
    pub total_trained_epochs: usize,
    pub wall_time: f64,
}

/// Engine state persisted between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub rounds_completed: usize,
    pub initial_k: usize,
    pub seed: u64,
    pub state: StateSnapshot<T>,
    pub prune_log: Vec<PruneEvent<T>>,
    pub score_history: Vec<ScoreTable<T>>,
    pub k_per_round: Vec<usize>,
    pub total_trained_epochs: usize,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(
            path,
        )?))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Configured search run. See [`run_search`] for the plain entry point.
pub struct Search<'a, T: Scalar> {
    spec: &'a SearchSpaceSpec,
    config: SearchConfig<T>,
    log: Option<&'a mut dyn Write>,
    checkpoint_dir: Option<PathBuf>,
    resume: Option<Checkpoint<T>>,
}

pub fn run_search<T: Scalar, E: Evaluator<T> + ?Sized>(
    spec: &SearchSpaceSpec,
    evaluator: &mut E,
    config: &SearchConfig<T>,
) -> Result<SearchResult<T>> {
    Search::new(spec, config.clone()).run(evaluator)
}

impl<'a, T: Scalar> Search<'a, T> {
    pub fn new(spec: &'a SearchSpaceSpec, config: SearchConfig<T>) -> Self {
        Self {
            spec,
            config,
            log: None,
            checkpoint_dir: None,
            resume: None,
        }
    }

    /// Streams JSONL events to `sink`.
    pub fn event_log(mut self, sink: &'a mut dyn Write) -> Self {
        self.log = Some(sink);
        self
    }

    pub fn checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    /// Continues from a checkpoint. Evaluator-internal state (weights,
    /// epoch counters) is not part of the checkpoint.
    pub fn resume(mut self, checkpoint: Checkpoint<T>) -> Self {
        self.resume = Some(checkpoint);
        self
    }

    fn emit(&mut self, event: &Event<T>) -> Result<()> {
        if let Some(sink) = self.log.as_mut() {
            serde_json::to_writer(&mut *sink, event)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    fn write_checkpoint(&self, cp: &Checkpoint<T>) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            cp.save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }

    pub fn run<E: Evaluator<T> + ?Sized>(mut self, evaluator: &mut E) -> Result<SearchResult<T>> {
        self.config.validate()?;
        let started = Instant::now();
        let spec = self.spec;
        let cfg = self.config.clone();
        let initial_k = spec.num_ops();
        let budget = total_epoch_budget(initial_k, cfg.epochs_per_round);

        let (mut state, mut prune_log, mut score_history, mut k_per_round, mut trained, first_round) =
            match self.resume.take() {
                Some(cp) => {
                    if cp.seed != cfg.seed || cp.initial_k != initial_k {
                        return Err(Error::InvalidArgument(
                            "checkpoint was written by a different seed or space".into(),
                        ));
                    }
                    let state = CategoricalState::from_snapshot(spec, &cp.state)?;
                    (
                        state,
                        cp.prune_log,
                        cp.score_history,
                        cp.k_per_round,
                        cp.total_trained_epochs,
                        cp.rounds_completed + 1,
                    )
                }
                None => (
                    CategoricalState::<T>::init_uniform(spec),
                    Vec::new(),
                    Vec::new(),
                    Vec::new(),
                    0,
                    1,
                ),
            };
        let mut records_history = Vec::new();

        let pool = if cfg.jobs > 1 && evaluator.supports_concurrency() {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.jobs)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };

        let mut round = first_round;
        while !state.is_converged() {
            let k = state.alive_count()?;
            let info = RoundInfo {
                round,
                k,
                epochs_per_round: cfg.epochs_per_round,
                epochs_before: epochs_before_round(initial_k, cfg.epochs_per_round, round),
                total_epoch_budget: budget,
            };
            self.emit(&Event::RoundStart { round, k })?;

            let mut sampler = rng::substream(cfg.seed, label::ENGINE, &[round as u64]);
            let archs = state.disjoint_sample(&mut sampler)?;
            for (slot, a) in archs.iter().enumerate() {
                self.emit(&Event::Sample {
                    round,
                    slot,
                    arch: spec.encode(a),
                })?;
            }
            evaluator
                .begin_round(&info, &archs)
                .map_err(|source| Error::Evaluator { round, source })?;

            let mut records = Vec::with_capacity(k * cfg.epochs_per_round);
            for epoch in 1..=cfg.epochs_per_round {
                let contexts: Vec<EpochContext> = (0..k)
                    .map(|slot| EpochContext {
                        round,
                        slot,
                        epoch,
                        search_epoch: info.epochs_before + epoch * k,
                        stream_seed: rng::derive_seed(cfg.seed, label::ORACLE, &[round as u64, slot as u64]),
                    })
                    .collect();
                let ev: &E = evaluator;
                let metrics: Vec<std::result::Result<T, EvalError>> = match &pool {
                    Some(pool) => pool.install(|| {
                        contexts
                            .par_iter()
                            .zip(archs.par_iter())
                            .map(|(ctx, a)| ev.train_epoch(ctx, a))
                            .collect()
                    }),
                    None => contexts
                        .iter()
                        .zip(&archs)
                        .map(|(ctx, a)| ev.train_epoch(ctx, a))
                        .collect(),
                };
                for (slot, m) in metrics.into_iter().enumerate() {
                    let metric = m.map_err(|source| Error::Evaluator { round, source })?;
                    if !metric.is_finite() {
                        return Err(Error::Evaluator {
                            round,
                            source: EvalError::Other(format!("slot {slot} returned non-finite metric {metric}")),
                        });
                    }
                    self.emit(&Event::Epoch {
                        round,
                        slot,
                        epoch,
                        metric,
                    })?;
                    records.push(EvaluationRecord {
                        architecture: archs[slot].clone(),
                        epoch,
                        metric,
                    });
                }
                trained += k;
            }

            let directed: Vec<EvaluationRecord<T>> = match cfg.direction {
                MetricDirection::Maximize => records.clone(),
                MetricDirection::Minimize => records
                    .iter()
                    .map(|r| EvaluationRecord {
                        metric: -r.metric,
                        ..r.clone()
                    })
                    .collect(),
            };
            let outcome = estimate_scores(&directed, &state, cfg.epochs_per_round, cfg.ema_coeff).and_then(|scores| {
                let updated = state.update_softmax(&scores, cfg.temperature)?;
                updated.check_invariants()?;
                let (pruned, events) = updated.prune_min()?;
                pruned.check_invariants()?;
                Ok((scores, updated, pruned, events))
            });
            let (scores, updated, pruned, events) = match outcome {
                Ok(v) => v,
                Err(e) => {
                    self.write_checkpoint(&Checkpoint {
                        rounds_completed: round - 1,
                        initial_k,
                        seed: cfg.seed,
                        state: state.snapshot(spec),
                        prune_log: prune_log.clone(),
                        score_history: score_history.clone(),
                        k_per_round: k_per_round.clone(),
                        total_trained_epochs: trained - k * cfg.epochs_per_round,
                    })?;
                    return Err(Error::InRound {
                        round,
                        source: Box::new(e),
                    });
                }
            };

            for (flat, row) in scores.scores.iter().enumerate() {
                let edge = state.keys[flat].to_string();
                for (pos, &score) in row.iter().enumerate() {
                    self.emit(&Event::Scores {
                        round,
                        edge: edge.clone(),
                        op: spec.op_name(state.edges[flat].alive[pos]).to_string(),
                        score,
                    })?;
                }
            }
            for (key, e) in updated.keys.iter().zip(&updated.edges) {
                self.emit(&Event::Update {
                    round,
                    edge: key.to_string(),
                    ops: e.alive.iter().map(|&o| spec.op_name(o).to_string()).collect(),
                    probs: e.probs.clone(),
                })?;
            }
            for ev in &events {
                self.emit(&Event::Prune {
                    round,
                    edge: ev.edge.to_string(),
                    op: spec.op_name(ev.op).to_string(),
                    prob: ev.prob,
                })?;
            }

            prune_log.extend(events);
            score_history.push(scores);
            records_history.push(records);
            k_per_round.push(k);
            state = pruned;

            if cfg.checkpoint_every > 0 && (round % cfg.checkpoint_every == 0 || state.is_converged()) {
                self.write_checkpoint(&Checkpoint {
                    rounds_completed: round,
                    initial_k,
                    seed: cfg.seed,
                    state: state.snapshot(spec),
                    prune_log: prune_log.clone(),
                    score_history: score_history.clone(),
                    k_per_round: k_per_round.clone(),
                    total_trained_epochs: trained,
                })?;
            }
            round += 1;
        }

        let final_architecture = state.final_architecture()?;
        let final_encoded = spec.encode(&final_architecture);
        self.emit(&Event::Final {
            arch: final_encoded.clone(),
        })?;
        if let Some(sink) = self.log.as_mut() {
            sink.flush()?;
        }
        Ok(SearchResult {
            final_architecture,
            final_encoded,
            prune_log,
            score_history,
            records: records_history,
            k_per_round,
            total_trained_epochs: trained,
            wall_time: started.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BaselineResult<T> {
    pub best: Architecture,
    pub best_metric: T,
    /// Every evaluated architecture with its mean metric, in sampling order.
    pub evaluated: Vec<(Architecture, T)>,
}

/// Trains `budget` distinct uniformly sampled architectures for
/// `epochs_per_round` epochs each and returns the best by mean metric.
/// When `budget` covers the whole space, every architecture is evaluated.
pub fn run_random_baseline<T: Scalar, E: Evaluator<T> + ?Sized>(
    spec: &SearchSpaceSpec,
    evaluator: &mut E,
    budget: usize,
    config: &SearchConfig<T>,
) -> Result<BaselineResult<T>> {
    config.validate()?;
    if budget == 0 {
        return Err(Error::InvalidArgument("baseline budget must be at least 1".into()));
    }
    let total = spec.architecture_count();
    let archs: Vec<Architecture> = if total <= num_bigint::BigUint::from(budget) {
        spec.enumerate(budget as u64)?.collect()
    } else {
        let mut rng = rng::substream(config.seed, label::BASELINE, &[]);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(budget);
        while out.len() < budget {
            let a = Architecture::new(
                (0..spec.num_flat_edges())
                    .map(|_| rng.random_range(0..spec.num_ops()))
                    .collect(),
            );
            if seen.insert(a.clone()) {
                out.push(a);
            }
        }
        out
    };
    let t = config.epochs_per_round;
    let info = RoundInfo {
        round: 1,
        k: archs.len(),
        epochs_per_round: t,
        epochs_before: 0,
        total_epoch_budget: archs.len() * t,
    };
    evaluator
        .begin_round(&info, &archs)
        .map_err(|source| Error::Evaluator { round: 1, source })?;
    let mut sums = vec![T::zero(); archs.len()];
    for epoch in 1..=t {
        for (slot, a) in archs.iter().enumerate() {
            let ctx = EpochContext {
                round: 1,
                slot,
                epoch,
                search_epoch: epoch * archs.len(),
                stream_seed: rng::derive_seed(config.seed, label::BASELINE, &[1, slot as u64]),
            };
            let m = evaluator
                .train_epoch(&ctx, a)
                .map_err(|source| Error::Evaluator { round: 1, source })?;
            sums[slot] = sums[slot] + m;
        }
    }
    let evaluated: Vec<(Architecture, T)> = archs
        .into_iter()
        .zip(sums)
        .map(|(a, s)| (a, s / T::of_usize(t)))
        .collect();
    let better = |a: T, b: T| match config.direction {
        MetricDirection::Maximize => a > b,
        MetricDirection::Minimize => a < b,
    };
    let mut best = 0;
    for i in 1..evaluated.len() {
        if better(evaluated[i].1, evaluated[best].1) {
            best = i;
        }
    }
    Ok(BaselineResult {
        best: evaluated[best].0.clone(),
        best_metric: evaluated[best].1,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Metric = fraction of edges carrying the `good` operation.
    struct Counting {
        good: usize,
        calls: AtomicUsize,
        concurrent: bool,
    }

    impl Evaluator<f64> for Counting {
        fn train_epoch(&self, _ctx: &EpochContext, arch: &Architecture) -> Result<f64, EvalError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let hits = arch.ops.iter().filter(|&&o| o == self.good).count();
            Ok(hits as f64 / arch.ops.len() as f64)
        }
        fn description(&self) -> String {
            "counting".into()
        }
        fn supports_concurrency(&self) -> bool {
            self.concurrent
        }
    }

    fn counting(good: usize) -> Counting {
        Counting {
            good,
            calls: AtomicUsize::new(0),
            concurrent: true,
        }
    }

    fn spec(m: usize, k: usize) -> SearchSpaceSpec {
        let ops: Vec<String> = (0..k).map(|i| format!("op{i}")).collect();
        SearchSpaceSpec::build(m, &ops, 1).unwrap()
    }

    #[test]
    fn budget_arithmetic() {
        assert_eq!(total_epoch_budget(8, 3), 105);
        assert_eq!(total_epoch_budget(2, 1), 2);
        // sum_{K=2..8} K * 3
        assert_eq!((2..=8).map(|k| k * 3).sum::<usize>(), 105);
        assert_eq!(epochs_before_round(8, 3, 1), 0);
        assert_eq!(epochs_before_round(8, 3, 2), 24);
        assert_eq!(epochs_before_round(8, 3, 8), 105);
    }

    #[test]
    fn round_structure() {
        let sp = spec(4, 8);
        let mut ev = counting(3);
        let res = run_search(&sp, &mut ev, &SearchConfig::<f64>::default()).unwrap();
        assert_eq!(res.total_trained_epochs, 105);
        assert_eq!(ev.calls.load(Ordering::Relaxed), 105);
        assert_eq!(res.k_per_round, vec![8, 7, 6, 5, 4, 3, 2]);
        assert_eq!(res.prune_log.len(), 7 * 14);
        for (r, recs) in res.records.iter().enumerate() {
            assert_eq!(recs.len(), res.k_per_round[r] * 3);
        }
    }

    #[test]
    fn minimize_flips_preference() {
        // With minimize, the "good" op (metric up) is the one to avoid.
        let sp = spec(1, 2);
        let cfg = SearchConfig::<f64> {
            epochs_per_round: 1,
            direction: MetricDirection::Minimize,
            ..Default::default()
        };
        for seed in 0..20 {
            let res = run_search(&sp, &mut counting(1), &SearchConfig { seed, ..cfg.clone() }).unwrap();
            // metric of the slot holding op1 on both edges is 1, the other slot 0;
            // when split both slots score 0.5 and tie-breaking prunes op0.
            assert!(res.final_architecture.ops.iter().all(|&o| o < 2));
        }
    }

    #[test]
    fn evaluator_error_carries_round() {
        struct Failing;
        impl Evaluator<f64> for Failing {
            fn train_epoch(&self, ctx: &EpochContext, _a: &Architecture) -> Result<f64, EvalError> {
                if ctx.round == 2 {
                    Err(EvalError::Other("boom".into()))
                } else {
                    Ok(0.5)
                }
            }
            fn description(&self) -> String {
                "failing".into()
            }
        }
        let err = run_search(&spec(1, 3), &mut Failing, &SearchConfig::<f64>::default()).unwrap_err();
        assert!(matches!(err, Error::Evaluator { round: 2, .. }), "{err}");
    }

    #[test]
    fn serial_and_parallel_agree() {
        let sp = spec(2, 5);
        let cfg = SearchConfig::<f64> {
            seed: 5,
            ..Default::default()
        };
        let mut serial_log = Vec::new();
        let a = Search::new(&sp, SearchConfig { jobs: 1, ..cfg.clone() })
            .event_log(&mut serial_log)
            .run(&mut counting(2))
            .unwrap();
        let mut par_log = Vec::new();
        let b = Search::new(&sp, SearchConfig { jobs: 8, ..cfg })
            .event_log(&mut par_log)
            .run(&mut counting(2))
            .unwrap();
        assert_eq!(a.prune_log, b.prune_log);
        assert_eq!(serial_log, par_log);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let sp = spec(2, 4);
        let dir = tempfile::tempdir().unwrap();
        let cfg = SearchConfig::<f64> {
            seed: 9,
            ..Default::default()
        };
        let full = run_search(&sp, &mut counting(1), &cfg).unwrap();

        // Run one round, then resume from its checkpoint.
        struct StopAfter<'a>(Counting, &'a AtomicUsize);
        impl Evaluator<f64> for StopAfter<'_> {
            fn begin_round(&mut self, info: &RoundInfo, _a: &[Architecture]) -> Result<(), EvalError> {
                self.1.store(info.round, Ordering::Relaxed);
                if info.round == 2 {
                    return Err(EvalError::Other("interrupted".into()));
                }
                Ok(())
            }
            fn train_epoch(&self, ctx: &EpochContext, a: &Architecture) -> Result<f64, EvalError> {
                self.0.train_epoch(ctx, a)
            }
            fn description(&self) -> String {
                "stop".into()
            }
        }
        let seen = AtomicUsize::new(0);
        let err = Search::new(&sp, cfg.clone())
            .checkpoints(dir.path())
            .run(&mut StopAfter(counting(1), &seen))
            .unwrap_err();
        assert!(matches!(err, Error::Evaluator { round: 2, .. }));
        let cp = Checkpoint::<f64>::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(cp.rounds_completed, 1);
        let resumed = Search::new(&sp, cfg).resume(cp).run(&mut counting(1)).unwrap();
        assert_eq!(resumed.prune_log, full.prune_log);
        assert_eq!(resumed.final_architecture, full.final_architecture);
        assert_eq!(resumed.total_trained_epochs, full.total_trained_epochs);
    }

    #[test]
    fn baseline_single_and_exhaustive() {
        let sp = spec(1, 3);
        let cfg = SearchConfig::<f64> {
            epochs_per_round: 1,
            seed: 4,
            ..Default::default()
        };
        let one = run_random_baseline(&sp, &mut counting(2), 1, &cfg).unwrap();
        assert_eq!(one.evaluated.len(), 1);
        assert_eq!(one.best, one.evaluated[0].0);

        let all = run_random_baseline(&sp, &mut counting(2), 9, &cfg).unwrap();
        assert_eq!(all.evaluated.len(), 9);
        assert_eq!(all.best.ops, vec![2, 2]);
        assert_eq!(all.best_metric, 1.0);

        let again = run_random_baseline(&sp, &mut counting(2), 4, &cfg).unwrap();
        assert_eq!(again, run_random_baseline(&sp, &mut counting(2), 4, &cfg).unwrap());
        assert!(run_random_baseline(&sp, &mut counting(2), 0, &cfg).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let sp = spec(1, 2);
        for cfg in [
            SearchConfig::<f64> {
                epochs_per_round: 0,
                ..Default::default()
            },
            SearchConfig::<f64> {
                temperature: 0.0,
                ..Default::default()
            },
            SearchConfig::<f64> {
                ema_coeff: Some(1.5),
                ..Default::default()
            },
        ] {
            assert!(run_search(&sp, &mut counting(0), &cfg).is_err());
        }
    }
}
