//! Dynamic distribution pruning for cell-based architecture search.
//!
//! Per-edge categorical distributions over a DAG cell space are sampled
//! disjointly, scored by a pluggable [`engine::Evaluator`], sharpened with a
//! softmax and pruned one operation per edge per round until a single
//! architecture remains. [`theory`] holds the pruning-error bound and a
//! Monte Carlo harness for checking it.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, with `F32` variants where useful.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod distribution;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod oracles;
pub mod rng;
pub mod scalar;
pub mod space;
pub mod theory;

pub use error::{Error, EvalError, Result};
pub use scalar::Scalar;
pub use space::{Architecture, EdgeId, EdgeKey, OperationId, SearchSpaceSpec};

pub type CategoricalStateF64 = distribution::CategoricalState<f64>;
pub type CategoricalStateF32 = distribution::CategoricalState<f32>;
pub type ScoreTableF64 = estimator::ScoreTable<f64>;
pub type EvaluationRecordF64 = estimator::EvaluationRecord<f64>;
pub type SearchConfigF64 = engine::SearchConfig<f64>;
pub type SearchConfigF32 = engine::SearchConfig<f32>;
pub type SearchResultF64 = engine::SearchResult<f64>;
pub type SearchResultF32 = engine::SearchResult<f32>;
pub type NoiseParamsF64 = oracles::NoiseParams<f64>;
pub type SyntheticLandscapeF64 = oracles::SyntheticLandscape<f64>;
pub type SyntheticOracleF64 = oracles::SyntheticOracle<f64>;
pub type TabularBenchmarkF64 = oracles::TabularBenchmark<f64>;
pub type BoundParamsF64 = theory::BoundParams<f64>;
