//! Per-edge categorical distributions over the operations still alive.

use crate::error::{Error, Result};
use crate::estimator::ScoreTable;
use crate::scalar::Scalar;
use crate::space::{Architecture, EdgeKey, SearchSpaceSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default softmax temperature. A 0.05 metric gap gives an e-fold
/// probability ratio.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// Tolerance of the per-edge normalization invariant.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Normalization tolerance for `k` probabilities in `T`: [`NORMALIZATION_TOL`]
/// or a few rounding steps of the sum, whichever is larger.
pub fn normalization_tol<T: Scalar>(k: usize) -> f64 {
    NORMALIZATION_TOL.max(4.0 * k as f64 * T::epsilon().as_f64())
}

/// Alive operations of one edge with their probabilities and latest scores.
/// The three vectors are aligned; `alive` is sorted by operation index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EdgeDistribution<T> {
    pub alive: Vec<usize>,
    pub probs: Vec<T>,
    pub scores: Vec<T>,
}

impl<T: Scalar> EdgeDistribution<T> {
    pub fn k(&self) -> usize {
        self.alive.len()
    }

    pub fn prob_of(&self, op: usize) -> Option<T> {
        self.alive.iter().position(|&a| a == op).map(|i| self.probs[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CategoricalState<T> {
    pub keys: Vec<EdgeKey>,
    pub edges: Vec<EdgeDistribution<T>>,
    pub round_index: usize,
}

/// Removal of one operation from one edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PruneEvent<T> {
    pub edge: EdgeKey,
    pub flat_edge: usize,
    pub op: usize,
    pub prob: T,
    pub round: usize,
}

fn softmax<T: Scalar>(scores: &[T], temperature: T) -> Vec<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    // floored at the smallest normal value so no alive operation reaches zero
    let exps: Vec<T> = scores
        .iter()
        .map(|&s| ((s - max) / temperature).exp().max(T::min_positive_value()))
        .collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<T: Scalar> CategoricalState<T> {
    /// Every operation alive on every edge with probability `1/K`.
    pub fn init_uniform(spec: &SearchSpaceSpec) -> Self {
        let k = spec.num_ops();
        let p = T::one() / T::of_usize(k);
        let keys = spec.flat_edges();
        let edges = keys
            .iter()
            .map(|_| EdgeDistribution {
                alive: (0..k).collect(),
                probs: vec![p; k],
                scores: vec![T::zero(); k],
            })
            .collect();
        Self {
            keys,
            edges,
            round_index: 0,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// The shared alive count, or an invariant error when edges disagree.
    pub fn alive_count(&self) -> Result<usize> {
        let k = self.edges.first().map_or(0, |e| e.k());
        if let Some((i, e)) = self.edges.iter().enumerate().find(|(_, e)| e.k() != k) {
            return Err(Error::Invariant(format!(
                "edge {} has {} alive operations, edge {} has {}",
                self.keys[i],
                e.k(),
                self.keys[0],
                k
            )));
        }
        Ok(k)
    }

    /// Checks normalization, positivity, alignment and equal alive counts.
    pub fn check_invariants(&self) -> Result<()> {
        if self.keys.len() != self.edges.len() {
            return Err(Error::Invariant("edge key count mismatch".into()));
        }
        let k = self.alive_count()?;
        if k == 0 {
            return Err(Error::Invariant("no alive operations".into()));
        }
        for (key, e) in self.keys.iter().zip(&self.edges) {
            if e.probs.len() != k || e.scores.len() != k {
                return Err(Error::Invariant(format!("edge {key}: misaligned vectors")));
            }
            if !e.alive.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Invariant(format!("edge {key}: alive set not sorted")));
            }
            if let Some(p) = e.probs.iter().find(|p| !(**p > T::zero()) || !p.is_finite()) {
                return Err(Error::Invariant(format!("edge {key}: probability {p} not positive")));
            }
            let sum: T = e.probs.iter().copied().sum();
            if (sum.as_f64() - 1.0).abs() > normalization_tol::<T>(k) {
                return Err(Error::Invariant(format!("edge {key}: probabilities sum to {sum}")));
            }
        }
        Ok(())
    }

    /// Draws each edge's operation independently from its distribution.
    pub fn sample_onehot<R: Rng + ?Sized>(&self, rng: &mut R) -> Architecture {
        let ops = self
            .edges
            .iter()
            .map(|e| {
                let u = T::of(rng.random::<f64>());
                let mut acc = T::zero();
                for (i, &p) in e.probs.iter().enumerate() {
                    acc = acc + p;
                    if u < acc {
                        return e.alive[i];
                    }
                }
                // u landed in the rounding slack above the last cumulative sum
                *e.alive.last().expect("edge has alive operations")
            })
            .collect();
        Architecture::new(ops)
    }

    /// Draws `K` architectures such that on every edge each alive operation
    /// lands in exactly one architecture. Each edge uses an independent
    /// uniformly random permutation of slots to alive operations.
    pub fn disjoint_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Architecture>> {
        let k = self.alive_count()?;
        if k == 0 {
            return Err(Error::Invariant("no alive operations".into()));
        }
        let mut slots = vec![Vec::with_capacity(self.edges.len()); k];
        for e in &self.edges {
            let mut perm = e.alive.clone();
            perm.shuffle(rng);
            for (slot, op) in perm.into_iter().enumerate() {
                slots[slot].push(op);
            }
        }
        Ok(slots.into_iter().map(Architecture::new).collect())
    }

    /// Replaces each edge's probabilities with `softmax(score / temperature)`
    /// over its alive operations and stores the scores.
    pub fn update_softmax(&self, scores: &ScoreTable<T>, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if scores.scores.len() != self.edges.len() {
            return Err(Error::InvalidArgument(format!(
                "score table covers {} edges, state has {}",
                scores.scores.len(),
                self.edges.len()
            )));
        }
        let mut next = self.clone();
        for (i, (edge, row)) in next.edges.iter_mut().zip(&scores.scores).enumerate() {
            if row.len() != edge.k() {
                return Err(Error::InvalidArgument(format!(
                    "edge {}: {} scores for {} alive operations",
                    self.keys[i],
                    row.len(),
                    edge.k()
                )));
            }
            if let Some(bad) = row.iter().find(|s| !s.is_finite()) {
                return Err(Error::NonFiniteScore {
                    edge: self.keys[i].to_string(),
                    value: bad.as_f64(),
                });
            }
            edge.probs = softmax(row, temperature);
            edge.scores = row.clone();
        }
        Ok(next)
    }

    /// Removes the least probable operation from every edge (ties go to the
    /// lowest operation index) and renormalizes the rest.
    pub fn prune_min(&self) -> Result<(Self, Vec<PruneEvent<T>>)> {
        let k = self.alive_count()?;
        if k < 2 {
            return Err(Error::Invariant(format!(
                "cannot prune with {k} alive operation(s) per edge"
            )));
        }
        let mut next = self.clone();
        let mut events = Vec::with_capacity(self.edges.len());
        for (flat, edge) in next.edges.iter_mut().enumerate() {
            // alive is sorted, so the first minimum is the lowest op index
            let mut pos = 0;
            for i in 1..edge.k() {
                if edge.probs[i] < edge.probs[pos] {
                    pos = i;
                }
            }
            let op = edge.alive.remove(pos);
            let prob = edge.probs.remove(pos);
            edge.scores.remove(pos);
            let total: T = edge.probs.iter().copied().sum();
            for p in edge.probs.iter_mut() {
                *p = *p / total;
            }
            events.push(PruneEvent {
                edge: self.keys[flat],
                flat_edge: flat,
                op,
                prob,
                round: self.round_index,
            });
        }
        next.round_index += 1;
        Ok((next, events))
    }

    pub fn is_converged(&self) -> bool {
        self.edges.iter().all(|e| e.k() == 1)
    }

    pub fn final_architecture(&self) -> Result<Architecture> {
        let open = self.edges.iter().filter(|e| e.k() != 1).count();
        if open > 0 {
            return Err(Error::NotConverged(open));
        }
        Ok(Architecture::new(self.edges.iter().map(|e| e.alive[0]).collect()))
    }

    /// Human-readable snapshot keyed by edge and operation names.
    pub fn snapshot(&self, spec: &SearchSpaceSpec) -> StateSnapshot<T> {
        StateSnapshot {
            round_index: self.round_index,
            edges: self
                .keys
                .iter()
                .zip(&self.edges)
                .map(|(key, e)| EdgeSnapshot {
                    edge: key.to_string(),
                    alive: e.alive.iter().map(|&o| spec.op_name(o).to_string()).collect(),
                    probs: e.probs.clone(),
                    scores: e.scores.clone(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(spec: &SearchSpaceSpec, snap: &StateSnapshot<T>) -> Result<Self> {
        let keys = spec.flat_edges();
        if snap.edges.len() != keys.len() {
            return Err(Error::Invariant(format!(
                "snapshot has {} edges, space has {}",
                snap.edges.len(),
                keys.len()
            )));
        }
        let mut edges = Vec::with_capacity(keys.len());
        for (key, e) in keys.iter().zip(&snap.edges) {
            if e.edge != key.to_string() {
                return Err(Error::Invariant(format!(
                    "snapshot edge {} where {key} expected",
                    e.edge
                )));
            }
            let alive = e
                .alive
                .iter()
                .map(|n| {
                    spec.op_index(n)
                        .ok_or_else(|| Error::Invariant(format!("unknown operation `{n}` in snapshot")))
                })
                .collect::<Result<Vec<_>>>()?;
            edges.push(EdgeDistribution {
                alive,
                probs: e.probs.clone(),
                scores: e.scores.clone(),
            });
        }
        let state = Self {
            keys,
            edges,
            round_index: snap.round_index,
        };
        state.check_invariants()?;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StateSnapshot<T> {
    pub round_index: usize,
    pub edges: Vec<EdgeSnapshot<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EdgeSnapshot<T> {
    pub edge: String,
    pub alive: Vec<String>,
    pub probs: Vec<T>,
    pub scores: Vec<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn spec(m: usize, k: usize) -> SearchSpaceSpec {
        let ops: Vec<String> = (0..k).map(|i| format!("op{i}")).collect();
        SearchSpaceSpec::build(m, &ops, 1).unwrap()
    }

    fn with_probs(probs: &[f64]) -> CategoricalState<f64> {
        let mut s = CategoricalState::<f64>::init_uniform(&spec(1, probs.len()));
        for e in &mut s.edges {
            e.probs = probs.to_vec();
        }
        s
    }

    fn table(rows: Vec<Vec<f64>>) -> ScoreTable<f64> {
        ScoreTable { scores: rows }
    }

    #[test]
    fn uniform_init() {
        let s = CategoricalState::<f64>::init_uniform(&spec(4, 8));
        assert!(s.edges.iter().all(|e| e.probs.iter().all(|&p| p == 0.125)));
        let s = CategoricalState::<f32>::init_uniform(&spec(1, 2));
        assert!(s.edges.iter().all(|e| e.probs == vec![0.5, 0.5]));
        assert_eq!(s.round_index, 0);
        s.check_invariants().unwrap();
    }

    #[test]
    fn onehot_degenerate_edge() {
        let mut s = with_probs(&[0.5, 0.5]);
        for e in &mut s.edges {
            e.alive = vec![1];
            e.probs = vec![1.0];
            e.scores = vec![0.0];
        }
        let mut rng = substream(1, "t", &[]);
        for _ in 0..100 {
            assert_eq!(s.sample_onehot(&mut rng).ops, vec![1, 1]);
        }
    }

    #[test]
    fn onehot_frequencies() {
        // 10_000 fair draws: 99.9% binomial interval is 0.5 +/- 3.29 * 0.005
        let s = with_probs(&[0.5, 0.5]);
        let mut rng = substream(7, "t", &[]);
        let n = 10_000;
        let ones = (0..n).filter(|_| s.sample_onehot(&mut rng).ops[0] == 1).count();
        let freq = ones as f64 / n as f64;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
    }

    #[test]
    fn onehot_deterministic() {
        let s = with_probs(&[0.2, 0.3, 0.5]);
        let a = s.sample_onehot(&mut substream(9, "t", &[]));
        let b = s.sample_onehot(&mut substream(9, "t", &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_covers_alive_sets() {
        let s = CategoricalState::<f64>::init_uniform(&spec(2, 3));
        let archs = s.disjoint_sample(&mut substream(3, "t", &[])).unwrap();
        assert_eq!(archs.len(), 3);
        for edge in 0..5 {
            let mut ops: Vec<usize> = archs.iter().map(|a| a.ops[edge]).collect();
            ops.sort();
            assert_eq!(ops, vec![0, 1, 2]);
        }
    }

    #[test]
    fn disjoint_single_alive() {
        let mut s = CategoricalState::<f64>::init_uniform(&spec(2, 3));
        for e in &mut s.edges {
            e.alive = vec![2];
            e.probs = vec![1.0];
            e.scores = vec![0.0];
        }
        let archs = s.disjoint_sample(&mut substream(3, "t", &[])).unwrap();
        assert_eq!(archs, vec![Architecture::new(vec![2; 5])]);
    }

    #[test]
    fn disjoint_rejects_unequal_counts() {
        let mut s = CategoricalState::<f64>::init_uniform(&spec(1, 3));
        s.edges[0].alive.pop();
        s.edges[0].probs = vec![0.5, 0.5];
        s.edges[0].scores.pop();
        assert!(matches!(
            s.disjoint_sample(&mut substream(0, "t", &[])),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn disjoint_slot_frequencies() {
        // K=4, 8000 runs: each (slot, op) cell count ~ Binomial(8000, 1/4),
        // mean 2000, sd 38.7; 3 sigma = 116.
        let s = CategoricalState::<f64>::init_uniform(&spec(1, 4));
        let runs = 8000;
        let mut counts = [[0usize; 4]; 4];
        for r in 0..runs {
            let archs = s.disjoint_sample(&mut substream(11, "t", &[r])).unwrap();
            for (slot, a) in archs.iter().enumerate() {
                counts[slot][a.ops[0]] += 1;
            }
        }
        for row in counts {
            for c in row {
                assert!((c as f64 - 2000.0).abs() <= 116.2, "{c}");
            }
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let s = with_probs(&[0.5, 0.5]);
        let e = std::f64::consts::E;
        let next = s.update_softmax(&table(vec![vec![1.0, 0.0]; 2]), 1.0).unwrap();
        assert!((next.edges[0].probs[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((next.edges[0].probs[1] - 1.0 / (1.0 + e)).abs() < 1e-15);

        let s = with_probs(&[0.2, 0.3, 0.5]);
        let next = s.update_softmax(&table(vec![vec![0.7; 3]; 2]), 0.05).unwrap();
        for &p in &next.edges[1].probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_scores_stay_finite() {
        // Oracle: e^0, e^-1, e^-2 normalized, evaluated directly.
        let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
        let expect = [1.0 / z, (-1.0f64).exp() / z, (-2.0f64).exp() / z];
        let s = with_probs(&[0.2, 0.3, 0.5]);
        let next = s
            .update_softmax(&table(vec![vec![1000.0, 999.0, 998.0]; 2]), 1.0)
            .unwrap();
        for (p, q) in next.edges[0].probs.iter().zip(expect) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((expect[0] - 0.6652).abs() < 5e-5);
        assert!((expect[1] - 0.2447).abs() < 5e-5);
        assert!((expect[2] - 0.0900).abs() < 5e-5);
    }

    #[test]
    fn softmax_never_reaches_zero() {
        let s = with_probs(&[0.25, 0.25, 0.25, 0.25]);
        let next = s
            .update_softmax(&table(vec![vec![50.0, 0.0, 10.0, 49.0]; 2]), 0.05)
            .unwrap();
        for e in &next.edges {
            assert!(e.probs.iter().all(|&p| p > 0.0), "{:?}", e.probs);
            assert!((e.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let (pruned, events) = next.prune_min().unwrap();
        assert_eq!(events[0].op, 1);
        assert!(pruned.edges[0].probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn softmax_rejects_bad_input() {
        let s = with_probs(&[0.5, 0.5]);
        assert!(matches!(
            s.update_softmax(&table(vec![vec![f64::NAN, 0.0]; 2]), 1.0),
            Err(Error::NonFiniteScore { .. })
        ));
        assert!(s.update_softmax(&table(vec![vec![0.0, 0.0]; 2]), 0.0).is_err());
        assert!(s.update_softmax(&table(vec![vec![0.0]; 2]), 1.0).is_err());
    }

    #[test]
    fn prune_argmin_and_renormalize() {
        let s = with_probs(&[0.1, 0.5, 0.4]);
        let (next, events) = s.prune_min().unwrap();
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| e.op == 0 && e.prob == 0.1 && e.round == 0));
        assert_eq!(next.edges[0].alive, vec![1, 2]);
        assert!((next.edges[0].probs[0] - 0.5 / 0.9).abs() < 1e-15);
        assert!((next.edges[0].probs[1] - 0.4 / 0.9).abs() < 1e-15);
        assert_eq!(next.round_index, 1);
        next.check_invariants().unwrap();
    }

    #[test]
    fn prune_tie_goes_to_lowest_index() {
        let (next, events) = with_probs(&[0.25; 4]).prune_min().unwrap();
        assert!(events.iter().all(|e| e.op == 0));
        assert_eq!(next.edges[0].alive, vec![1, 2, 3]);
    }

    #[test]
    fn prune_refuses_single_alive() {
        let mut s = with_probs(&[0.5, 0.5]);
        for e in &mut s.edges {
            e.alive.pop();
            e.probs = vec![1.0];
            e.scores.pop();
        }
        assert!(s.prune_min().is_err());
        assert!(s.is_converged());
        assert_eq!(s.final_architecture().unwrap().ops, vec![0, 0]);
    }

    #[test]
    fn converges_after_k_minus_one_prunes() {
        let mut s = CategoricalState::<f64>::init_uniform(&spec(4, 8));
        assert!(!s.is_converged());
        assert!(matches!(s.final_architecture(), Err(Error::NotConverged(14))));
        let mut rounds = 0;
        while !s.is_converged() {
            s = s.prune_min().unwrap().0;
            rounds += 1;
        }
        assert_eq!(rounds, 7);
    }

    #[test]
    fn snapshot_roundtrip() {
        let sp = spec(2, 3);
        let s = CategoricalState::<f64>::init_uniform(&sp)
            .update_softmax(&table(vec![vec![0.1, 0.2, 0.3]; 5]), 0.05)
            .unwrap()
            .prune_min()
            .unwrap()
            .0;
        let json = serde_json::to_string(&s.snapshot(&sp)).unwrap();
        let back: StateSnapshot<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(CategoricalState::from_snapshot(&sp, &back).unwrap(), s);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            scores in proptest::collection::vec(-1.0f64..1.0, 2..9),
            shift in -50.0f64..50.0,
            temp in 0.01f64..2.0,
        ) {
            let k = scores.len();
            let s = CategoricalState::<f64>::init_uniform(&spec(1, k));
            let shifted: Vec<f64> = scores.iter().map(|x| x + shift).collect();
            let a = s.update_softmax(&table(vec![scores.clone(); 2]), temp).unwrap();
            let b = s.update_softmax(&table(vec![shifted; 2]), temp).unwrap();
            for (p, q) in a.edges[0].probs.iter().zip(&b.edges[0].probs) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }

        #[test]
        fn prune_keeps_the_most_probable(
            scores in proptest::collection::vec(-1.0f64..1.0, 2..9),
        ) {
            let k = scores.len();
            let s = CategoricalState::<f64>::init_uniform(&spec(1, k))
                .update_softmax(&table(vec![scores; 2]), 0.05)
                .unwrap();
            let (next, events) = s.prune_min().unwrap();
            next.check_invariants().unwrap();
            for ev in events {
                let e = &s.edges[ev.flat_edge];
                let max = e.probs.iter().copied().fold(f64::MIN, f64::max);
                let min = e.probs.iter().copied().fold(f64::MAX, f64::min);
                prop_assert_eq!(ev.prob, min);
                prop_assert!(ev.prob < max || min == max);
            }
        }
    }
}
