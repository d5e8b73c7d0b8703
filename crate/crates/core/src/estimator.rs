//! Turns per-epoch evaluation records into per-edge operation scores.
//!
//! An operation's score is the mean validation metric, over the round's
//! `T` epochs, of the one architecture that carried it on that edge. The
//! metric is a monotone proxy for the validation likelihood, not a
//! probability.

use crate::distribution::CategoricalState;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::Architecture;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Validation metric of one architecture after one epoch of the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvaluationRecord<T> {
    pub architecture: Architecture,
    /// Epoch within the round, `1..=T`.
    pub epoch: usize,
    pub metric: T,
}

/// Score per alive operation per edge, aligned with the state's alive lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreTable<T> {
    pub scores: Vec<Vec<T>>,
}

/// Mean metric of each architecture over epochs `1..=epochs`.
fn architecture_means<T: Scalar>(records: &[EvaluationRecord<T>], epochs: usize) -> Result<BTreeMap<&Architecture, T>> {
    let mut by_arch: BTreeMap<&Architecture, Vec<Option<T>>> = BTreeMap::new();
    for r in records {
        if r.epoch == 0 || r.epoch > epochs {
            return Err(Error::Records(format!("epoch {} outside 1..={epochs}", r.epoch)));
        }
        if !r.metric.is_finite() {
            return Err(Error::Records(format!("non-finite metric at epoch {}", r.epoch)));
        }
        let slot = &mut by_arch.entry(&r.architecture).or_insert_with(|| vec![None; epochs])[r.epoch - 1];
        if slot.replace(r.metric).is_some() {
            return Err(Error::Records(format!(
                "duplicate record for epoch {} of {:?}",
                r.epoch, r.architecture.ops
            )));
        }
    }
    by_arch
        .into_iter()
        .map(|(arch, metrics)| {
            let mut sum = T::zero();
            for (t, m) in metrics.iter().enumerate() {
                let m = m.ok_or_else(|| Error::Records(format!("missing epoch {} for {:?}", t + 1, arch.ops)))?;
                sum = sum + m;
            }
            Ok((arch, sum / T::of_usize(epochs)))
        })
        .collect()
}

/// Scores every alive operation from one round of records.
///
/// With `ema_coeff = Some(c)` and a state that has already been scored
/// (`round_index > 0`), the result is `(1 - c) * previous + c * mean`.
pub fn estimate_scores<T: Scalar>(
    records: &[EvaluationRecord<T>],
    state: &CategoricalState<T>,
    epochs: usize,
    ema_coeff: Option<T>,
) -> Result<ScoreTable<T>> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("epochs per round must be at least 1".into()));
    }
    if let Some(c) = ema_coeff {
        if !(c > T::zero() && c <= T::one()) {
            return Err(Error::InvalidArgument(format!("EMA coefficient {c} outside (0, 1]")));
        }
    }
    let means = architecture_means(records, epochs)?;
    let mut scores = Vec::with_capacity(state.num_edges());
    for (flat, edge) in state.edges.iter().enumerate() {
        let mut row: Vec<Option<T>> = vec![None; edge.k()];
        for (arch, &mean) in &means {
            let op = *arch.ops.get(flat).ok_or_else(|| {
                Error::Records(format!(
                    "architecture {:?} too short for edge {}",
                    arch.ops, state.keys[flat]
                ))
            })?;
            let pos = edge
                .alive
                .iter()
                .position(|&a| a == op)
                .ok_or_else(|| Error::Records(format!("edge {}: operation {op} is not alive", state.keys[flat])))?;
            if row[pos].replace(mean).is_some() {
                return Err(Error::Records(format!(
                    "edge {}: operation {op} covered more than once",
                    state.keys[flat]
                )));
            }
        }
        let row = row
            .into_iter()
            .enumerate()
            .map(|(pos, s)| {
                let fresh = s.ok_or_else(|| {
                    Error::Records(format!(
                        "edge {}: operation {} not covered",
                        state.keys[flat], edge.alive[pos]
                    ))
                })?;
                Ok(match ema_coeff {
                    Some(c) if state.round_index > 0 => (T::one() - c) * edge.scores[pos] + c * fresh,
                    _ => fresh,
                })
            })
            .collect::<Result<Vec<T>>>()?;
        scores.push(row);
    }
    Ok(ScoreTable { scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::SearchSpaceSpec;
    use proptest::prelude::*;

    fn state(m: usize, k: usize) -> CategoricalState<f64> {
        let ops: Vec<String> = (0..k).map(|i| format!("op{i}")).collect();
        CategoricalState::init_uniform(&SearchSpaceSpec::build(m, &ops, 1).unwrap())
    }

    fn rec(ops: &[usize], epoch: usize, metric: f64) -> EvaluationRecord<f64> {
        EvaluationRecord {
            architecture: Architecture::new(ops.to_vec()),
            epoch,
            metric,
        }
    }

    #[test]
    fn mean_over_epochs() {
        let s = state(1, 2);
        let records = vec![
            rec(&[0, 1], 1, 0.5),
            rec(&[0, 1], 2, 0.6),
            rec(&[0, 1], 3, 0.7),
            rec(&[1, 0], 1, 0.1),
            rec(&[1, 0], 2, 0.1),
            rec(&[1, 0], 3, 0.1),
        ];
        let t = estimate_scores(&records, &s, 3, None).unwrap();
        assert!((t.scores[0][0] - 0.6).abs() < 1e-15);
        assert!((t.scores[1][1] - 0.6).abs() < 1e-15);
        assert!((t.scores[0][1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_epoch_identity() {
        let s = state(1, 2);
        let records = vec![rec(&[0, 0], 1, 0.42), rec(&[1, 1], 1, 0.9)];
        let t = estimate_scores(&records, &s, 1, None).unwrap();
        assert_eq!(t.scores, vec![vec![0.42, 0.9], vec![0.42, 0.9]]);
    }

    #[test]
    fn shared_architecture_credits_every_edge() {
        // Hand trace: arch A = (op1, op0) mean 0.8, arch B = (op0, op1) mean 0.3.
        // Edge 0: op0 -> B (0.3), op1 -> A (0.8). Edge 1: op0 -> A (0.8), op1 -> B (0.3).
        let s = state(1, 2);
        let records = vec![
            rec(&[1, 0], 1, 0.7),
            rec(&[1, 0], 2, 0.9),
            rec(&[0, 1], 1, 0.2),
            rec(&[0, 1], 2, 0.4),
        ];
        let t = estimate_scores(&records, &s, 2, None).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(t.scores[0][0], 0.3) && close(t.scores[0][1], 0.8));
        assert!(close(t.scores[1][0], 0.8) && close(t.scores[1][1], 0.3));
    }

    #[test]
    fn ema_blends_previous_scores() {
        let mut s = state(1, 2);
        s.round_index = 1;
        for e in &mut s.edges {
            e.scores = vec![0.5, 0.5];
        }
        let records = vec![rec(&[0, 0], 1, 1.0), rec(&[1, 1], 1, 0.0)];
        let t = estimate_scores(&records, &s, 1, Some(0.01)).unwrap();
        assert!((t.scores[0][0] - 0.505).abs() < 1e-15);
        assert!((t.scores[0][1] - 0.495).abs() < 1e-15);
        // first round has no history
        s.round_index = 0;
        let t = estimate_scores(&records, &s, 1, Some(0.01)).unwrap();
        assert_eq!(t.scores[0], vec![1.0, 0.0]);
    }

    #[test]
    fn missing_and_duplicate_coverage() {
        let s = state(1, 2);
        // epoch 2 missing
        let r = vec![rec(&[0, 0], 1, 0.1), rec(&[1, 1], 1, 0.1), rec(&[1, 1], 2, 0.1)];
        assert!(matches!(estimate_scores(&r, &s, 2, None), Err(Error::Records(_))));
        // op 1 never covered on either edge
        let r = vec![rec(&[0, 0], 1, 0.1)];
        assert!(estimate_scores(&r, &s, 1, None).is_err());
        // op 0 covered twice on edge 0
        let r = vec![rec(&[0, 0], 1, 0.1), rec(&[0, 1], 1, 0.2), rec(&[1, 1], 1, 0.3)];
        assert!(estimate_scores(&r, &s, 1, None).is_err());
        // duplicate record
        let r = vec![rec(&[0, 0], 1, 0.1), rec(&[0, 0], 1, 0.1), rec(&[1, 1], 1, 0.3)];
        assert!(estimate_scores(&r, &s, 1, None).is_err());
        // epoch out of range
        let r = vec![rec(&[0, 0], 2, 0.1), rec(&[1, 1], 1, 0.3)];
        assert!(estimate_scores(&r, &s, 1, None).is_err());
    }

    #[test]
    fn constant_metrics_give_uniform_update() {
        let s = state(2, 3);
        let archs = [[0, 1, 2, 0, 1], [1, 2, 0, 1, 2], [2, 0, 1, 2, 0]];
        let records: Vec<_> = archs
            .iter()
            .flat_map(|a| (1..=3).map(move |t| rec(a, t, 0.37)))
            .collect();
        let t = estimate_scores(&records, &s, 3, None).unwrap();
        assert!(t
            .scores
            .iter()
            .flatten()
            .all(|&x| x == t.scores[0][0] && (x - 0.37).abs() < 1e-15));
        let next = s.update_softmax(&t, 0.05).unwrap();
        for e in &next.edges {
            for &p in &e.probs {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn scores_bounded_and_order_free(
            metrics in proptest::collection::vec(0.0f64..1.0, 9),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let s = state(2, 3);
            let archs = [[0, 1, 2, 0, 1], [1, 2, 0, 1, 2], [2, 0, 1, 2, 0]];
            let mut records: Vec<_> = archs
                .iter()
                .enumerate()
                .flat_map(|(i, a)| (1..=3).map(move |t| (i, a, t)))
                .map(|(i, a, t)| rec(a, t, metrics[i * 3 + t - 1]))
                .collect();
            let base = estimate_scores(&records, &s, 3, None).unwrap();
            let lo = metrics.iter().copied().fold(f64::MAX, f64::min);
            let hi = metrics.iter().copied().fold(f64::MIN, f64::max);
            for &x in base.scores.iter().flatten() {
                prop_assert!(x >= lo - 1e-15 && x <= hi + 1e-15);
            }
            records.shuffle(&mut crate::rng::substream(seed, "shuffle", &[]));
            prop_assert_eq!(estimate_scores(&records, &s, 3, None).unwrap(), base);
        }
    }
}
