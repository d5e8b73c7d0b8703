//! Micro one-shot supernet.
//!
//! Every edge of every cell holds the weights of all micro operations; a
//! sampled architecture activates one per edge. Node `j` of a cell is the
//! sum of its incoming edge outputs, the cell output is the mean of its
//! intermediate nodes, and cells are stacked (one per cell type) with the
//! two previous outputs as the next cell's inputs. Two linear stems feed
//! the first cell and a linear head produces two logits.
//!
//! Training is momentum SGD with weight decay and a cosine-annealed step
//! size; only the tensors reached by the sampled architecture (plus stems
//! and head) are updated, so unsampled operations keep their weights.

use super::data::{train_val_split, Dataset, DatasetKind};
use crate::engine::{EpochContext, Evaluator, RoundInfo};
use crate::error::{Error, EvalError, Result};
use crate::rng::{self, StreamRng};
use crate::space::{Architecture, SearchSpaceSpec};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroOp {
    Zero,
    Identity,
    Linear,
    MlpNarrow,
    MlpWide,
}

impl MicroOp {
    pub const ALL: [MicroOp; 5] = [
        MicroOp::Zero,
        MicroOp::Identity,
        MicroOp::Linear,
        MicroOp::MlpNarrow,
        MicroOp::MlpWide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MicroOp::Zero => "zero",
            MicroOp::Identity => "identity",
            MicroOp::Linear => "linear",
            MicroOp::MlpNarrow => "mlp_narrow",
            MicroOp::MlpWide => "mlp_wide",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == name)
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|op| op.name()).collect()
    }

    fn is_parametric(self) -> bool {
        matches!(self, MicroOp::Linear | MicroOp::MlpNarrow | MicroOp::MlpWide)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    /// Node feature width.
    pub width: usize,
    pub narrow_hidden: usize,
    pub wide_hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dataset: DatasetKind,
    pub n_train: usize,
    pub n_val: usize,
    /// Seed of the dataset, kept apart so several weight seeds share data.
    pub data_seed: u64,
    /// Seed of weight initialization and minibatch order.
    pub seed: u64,
    /// Re-initialize all weights at the start of every round after the first.
    pub reset_each_round: bool,
    /// Cosine horizon used until an engine announces its budget.
    pub default_budget: usize,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            width: 8,
            narrow_hidden: 4,
            wide_hidden: 16,
            learning_rate: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
            batch_size: 32,
            dataset: DatasetKind::Ring,
            n_train: 512,
            n_val: 256,
            data_seed: 0,
            seed: 0,
            reset_each_round: false,
            default_budget: 105,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    value: Array2<f64>,
    velocity: Array2<f64>,
}

impl Param {
    fn new(value: Array2<f64>) -> Self {
        let velocity = Array2::zeros(value.raw_dim());
        Self { value, velocity }
    }

    fn step(&mut self, grad: &Array2<f64>, lr: f64, momentum: f64, weight_decay: f64) {
        let g = grad + &(&self.value * weight_decay);
        self.velocity = &self.velocity * momentum + &g;
        self.value = &self.value - &(&self.velocity * lr);
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut StreamRng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

#[derive(Debug, Clone, PartialEq)]
struct Weights {
    /// `[w_a, b_a, w_b, b_b]`
    stems: Vec<Param>,
    /// `[w, b]`
    head: Vec<Param>,
    /// `ops[flat_edge][op]`: empty for non-parametric operations,
    /// `[w, b]` for linear, `[w1, b1, w2, b2]` for the MLPs.
    ops: Vec<Vec<Vec<Param>>>,
}

impl Weights {
    fn init(cfg: &SupernetConfig, kinds: &[MicroOp], num_flat_edges: usize) -> Self {
        let d = cfg.width;
        let mut r = rng::substream(cfg.seed, "supernet-init", &[u64::MAX]);
        let stems = vec![
            Param::new(uniform(2, d, &mut r)),
            Param::new(Array2::zeros((1, d))),
            Param::new(uniform(2, d, &mut r)),
            Param::new(Array2::zeros((1, d))),
        ];
        let head = vec![Param::new(uniform(d, 2, &mut r)), Param::new(Array2::zeros((1, 2)))];
        let ops = (0..num_flat_edges)
            .map(|flat| {
                kinds
                    .iter()
                    .enumerate()
                    .map(|(o, kind)| {
                        let mut r = rng::substream(cfg.seed, "supernet-init", &[flat as u64, o as u64]);
                        let mlp = |h: usize, r: &mut StreamRng| {
                            vec![
                                Param::new(uniform(d, h, r)),
                                Param::new(Array2::zeros((1, h))),
                                Param::new(uniform(h, d, r)),
                                Param::new(Array2::zeros((1, d))),
                            ]
                        };
                        match kind {
                            MicroOp::Zero | MicroOp::Identity => Vec::new(),
                            MicroOp::Linear => {
                                vec![Param::new(uniform(d, d, &mut r)), Param::new(Array2::zeros((1, d)))]
                            }
                            MicroOp::MlpNarrow => mlp(cfg.narrow_hidden, &mut r),
                            MicroOp::MlpWide => mlp(cfg.wide_hidden, &mut r),
                        }
                    })
                    .collect()
            })
            .collect();
        Self { stems, head, ops }
    }
}

/// Forward values kept for the backward pass.
struct Trace {
    /// Stem outputs followed by each cell's output.
    streams: Vec<Array2<f64>>,
    /// `nodes[cell][node + 1]` for nodes `-1..=M`.
    nodes: Vec<Vec<Array2<f64>>>,
    /// Hidden activations of MLP edges, `hidden[flat_edge]`.
    hidden: Vec<Option<Array2<f64>>>,
    logits: Array2<f64>,
}

fn affine(x: &Array2<f64>, w: &Param, b: &Param) -> Array2<f64> {
    x.dot(&w.value) + &b.value
}

fn apply_op(kind: MicroOp, params: &[Param], x: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
    match kind {
        MicroOp::Zero => (Array2::zeros(x.raw_dim()), None),
        MicroOp::Identity => (x.clone(), None),
        MicroOp::Linear => (affine(x, &params[0], &params[1]), None),
        MicroOp::MlpNarrow | MicroOp::MlpWide => {
            let h = affine(x, &params[0], &params[1]).mapv(f64::tanh);
            (affine(&h, &params[2], &params[3]), Some(h))
        }
    }
}

/// Backward of one edge operation; returns the input gradient and the
/// parameter gradients (empty for non-parametric operations).
fn op_backward(
    kind: MicroOp,
    params: &[Param],
    x: &Array2<f64>,
    hidden: Option<&Array2<f64>>,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let bias_grad = |d: &Array2<f64>| d.sum_axis(Axis(0)).insert_axis(Axis(0));
    match kind {
        MicroOp::Zero => (Array2::zeros(x.raw_dim()), Vec::new()),
        MicroOp::Identity => (d_out.clone(), Vec::new()),
        MicroOp::Linear => {
            let dw = x.t().dot(d_out);
            let db = bias_grad(d_out);
            (d_out.dot(&params[0].value.t()), vec![dw, db])
        }
        MicroOp::MlpNarrow | MicroOp::MlpWide => {
            let h = hidden.expect("MLP edge keeps its hidden activation");
            let dw2 = h.t().dot(d_out);
            let db2 = bias_grad(d_out);
            let dh = d_out.dot(&params[2].value.t());
            let da = &dh * &h.mapv(|v| 1.0 - v * v);
            let dw1 = x.t().dot(&da);
            let db1 = bias_grad(&da);
            (da.dot(&params[0].value.t()), vec![dw1, db1, dw2, db2])
        }
    }
}

struct Inner {
    weights: Weights,
    train: Dataset,
    val: Dataset,
    epochs_done: usize,
    budget: usize,
}

/// Weight-sharing supernet over the micro operation vocabulary.
pub struct MicroSupernet {
    spec: SearchSpaceSpec,
    kinds: Vec<MicroOp>,
    config: SupernetConfig,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for MicroSupernet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MicroSupernet")
            .field("kinds", &self.kinds)
            .field("config", &self.config)
            .finish()
    }
}

impl MicroSupernet {
    /// The space's operation names must come from [`MicroOp::names`].
    pub fn new(spec: &SearchSpaceSpec, config: SupernetConfig) -> Result<Self> {
        let kinds = spec
            .operations
            .iter()
            .map(|o| {
                MicroOp::from_name(&o.name).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "operation `{}` is not a micro operation ({})",
                        o.name,
                        MicroOp::names().join(", ")
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if config.width == 0 || config.batch_size == 0 || config.n_train == 0 || config.n_val == 0 {
            return Err(Error::InvalidArgument("supernet sizes must be positive".into()));
        }
        let (train, val) = train_val_split(
            config.dataset,
            config.n_train,
            config.n_val,
            &mut rng::substream(config.data_seed, "dataset", &[]),
        );
        let weights = Weights::init(&config, &kinds, spec.num_flat_edges());
        Ok(Self {
            spec: spec.clone(),
            kinds,
            inner: Mutex::new(Inner {
                weights,
                train,
                val,
                epochs_done: 0,
                budget: config.default_budget.max(1),
            }),
            config,
        })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.config
    }

    pub fn validation_set(&self) -> Dataset {
        self.inner.lock().expect("supernet lock").val.clone()
    }

    /// Sets the cosine horizon in epochs and restarts the schedule.
    pub fn set_budget(&self, epochs: usize) {
        let mut inner = self.inner.lock().expect("supernet lock");
        inner.budget = epochs.max(1);
        inner.epochs_done = 0;
    }

    /// Learning rate of the next epoch.
    pub fn current_learning_rate(&self) -> f64 {
        let inner = self.inner.lock().expect("supernet lock");
        cosine_lr(self.config.learning_rate, inner.epochs_done, inner.budget)
    }

    fn check_arch(&self, arch: &Architecture) -> Result<(), EvalError> {
        self.spec
            .validate(arch)
            .map_err(|e| EvalError::InvalidArchitecture(e.to_string()))
    }

    fn forward(&self, w: &Weights, arch: &Architecture, x: &Array2<f64>) -> Trace {
        let edges = &self.spec.edges;
        let m = self.spec.num_nodes;
        let mut streams = vec![affine(x, &w.stems[0], &w.stems[1]), affine(x, &w.stems[2], &w.stems[3])];
        let mut all_nodes = Vec::with_capacity(self.spec.num_cell_types);
        let mut hidden = vec![None; self.spec.num_flat_edges()];
        for cell in 0..self.spec.num_cell_types {
            let n = streams.len();
            let mut nodes = vec![streams[n - 2].clone(), streams[n - 1].clone()];
            nodes.extend((0..m).map(|_| Array2::zeros((x.nrows(), self.config.width))));
            for (e, edge) in edges.iter().enumerate() {
                let flat = cell * edges.len() + e;
                let op = arch.ops[flat];
                let (out, h) = apply_op(self.kinds[op], &w.ops[flat][op], &nodes[(edge.source + 1) as usize]);
                nodes[(edge.target + 1) as usize] += &out;
                hidden[flat] = h;
            }
            let mut out = Array2::zeros((x.nrows(), self.config.width));
            for node in &nodes[2..] {
                out += node;
            }
            streams.push(out / m as f64);
            all_nodes.push(nodes);
        }
        let logits = affine(streams.last().expect("stems present"), &w.head[0], &w.head[1]);
        Trace {
            streams,
            nodes: all_nodes,
            hidden,
            logits,
        }
    }

    /// Node values `B_{-1}..B_M` of every cell for inputs `x`.
    pub fn node_values(&self, arch: &Architecture, x: &Array2<f64>) -> Result<Vec<Vec<Array2<f64>>>, EvalError> {
        self.check_arch(arch)?;
        let inner = self.inner.lock().expect("supernet lock");
        Ok(self.forward(&inner.weights, arch, x).nodes)
    }

    /// Overwrites the weights of one parametric operation (tensor order as
    /// in the forward pass: `[w, b]` or `[w1, b1, w2, b2]`).
    pub fn set_op_weights(&self, flat_edge: usize, op: usize, tensors: Vec<Array2<f64>>) -> Result<()> {
        let mut inner = self.inner.lock().expect("supernet lock");
        let slot = &mut inner.weights.ops[flat_edge][op];
        if slot.len() != tensors.len() || slot.iter().zip(&tensors).any(|(p, t)| p.value.dim() != t.dim()) {
            return Err(Error::InvalidArgument(
                "tensor shapes do not match the operation".into(),
            ));
        }
        *slot = tensors.into_iter().map(Param::new).collect();
        Ok(())
    }

    /// Overwrites the stems (`[w_a, b_a, w_b, b_b]`).
    pub fn set_stem_weights(&self, tensors: Vec<Array2<f64>>) -> Result<()> {
        let mut inner = self.inner.lock().expect("supernet lock");
        if tensors.len() != 4
            || inner
                .weights
                .stems
                .iter()
                .zip(&tensors)
                .any(|(p, t)| p.value.dim() != t.dim())
        {
            return Err(Error::InvalidArgument("stem shapes do not match".into()));
        }
        inner.weights.stems = tensors.into_iter().map(Param::new).collect();
        Ok(())
    }

    /// Current weights of every operation, `[flat_edge][op][tensor]`.
    pub fn op_weights(&self) -> Vec<Vec<Vec<Array2<f64>>>> {
        let inner = self.inner.lock().expect("supernet lock");
        inner
            .weights
            .ops
            .iter()
            .map(|edge| {
                edge.iter()
                    .map(|op| op.iter().map(|p| p.value.clone()).collect())
                    .collect()
            })
            .collect()
    }

    pub fn accuracy(&self, arch: &Architecture) -> Result<f64, EvalError> {
        self.check_arch(arch)?;
        let inner = self.inner.lock().expect("supernet lock");
        Ok(self.accuracy_on(&inner.weights, arch, &inner.val))
    }

    fn accuracy_on(&self, w: &Weights, arch: &Architecture, data: &Dataset) -> f64 {
        let logits = self.forward(w, arch, &data.x).logits;
        let correct = logits
            .outer_iter()
            .zip(&data.y)
            .filter(|(row, &y)| usize::from(row[1] > row[0]) == y)
            .count();
        correct as f64 / data.len() as f64
    }

    fn locate_non_finite(&self, w: &Weights, arch: &Architecture, x: &Array2<f64>) -> String {
        let trace = self.forward(w, arch, x);
        let edges = &self.spec.edges;
        for (cell, nodes) in trace.nodes.iter().enumerate() {
            for (e, edge) in edges.iter().enumerate() {
                let flat = cell * edges.len() + e;
                let op = arch.ops[flat];
                let (out, _) = apply_op(self.kinds[op], &w.ops[flat][op], &nodes[(edge.source + 1) as usize]);
                if out.iter().any(|v| !v.is_finite()) {
                    return format!("{}={}", self.spec.edge_key(flat), self.spec.op_name(op));
                }
            }
        }
        "stem/head".into()
    }

    /// One minibatch step; returns the batch loss.
    fn step(
        &self,
        w: &mut Weights,
        arch: &Architecture,
        x: &Array2<f64>,
        y: &[usize],
        lr: f64,
    ) -> Result<f64, EvalError> {
        let trace = self.forward(w, arch, x);
        let b = x.nrows() as f64;
        let mut d_logits = Array2::zeros(trace.logits.raw_dim());
        let mut loss = 0.0;
        for (i, row) in trace.logits.outer_iter().enumerate() {
            let max = row[0].max(row[1]);
            let e0 = (row[0] - max).exp();
            let e1 = (row[1] - max).exp();
            let z = e0 + e1;
            let p = [e0 / z, e1 / z];
            loss -= p[y[i]].ln();
            for c in 0..2 {
                d_logits[[i, c]] = (p[c] - if c == y[i] { 1.0 } else { 0.0 }) / b;
            }
        }
        loss /= b;
        if !loss.is_finite() {
            return Err(EvalError::NonFiniteLoss {
                location: self.locate_non_finite(w, arch, x),
            });
        }

        let last = trace.streams.last().expect("stems present");
        let head_grads = [last.t().dot(&d_logits), d_logits.sum_axis(Axis(0)).insert_axis(Axis(0))];
        let mut d_streams: Vec<Array2<f64>> = trace.streams.iter().map(|s| Array2::zeros(s.raw_dim())).collect();
        *d_streams.last_mut().expect("stems present") = d_logits.dot(&w.head[0].value.t());

        let edges = &self.spec.edges;
        let m = self.spec.num_nodes as f64;
        let mut op_grads: Vec<(usize, usize, Vec<Array2<f64>>)> = Vec::new();
        for cell in (0..self.spec.num_cell_types).rev() {
            let nodes = &trace.nodes[cell];
            let d_out = &d_streams[cell + 2] / m;
            let mut d_nodes: Vec<Array2<f64>> = nodes.iter().map(|n| Array2::zeros(n.raw_dim())).collect();
            for d in d_nodes.iter_mut().skip(2) {
                d.assign(&d_out);
            }
            for (e, edge) in edges.iter().enumerate().rev() {
                let flat = cell * edges.len() + e;
                let op = arch.ops[flat];
                let src = (edge.source + 1) as usize;
                let (d_in, grads) = op_backward(
                    self.kinds[op],
                    &w.ops[flat][op],
                    &nodes[src],
                    trace.hidden[flat].as_ref(),
                    &d_nodes[(edge.target + 1) as usize],
                );
                d_nodes[src] += &d_in;
                if self.kinds[op].is_parametric() {
                    op_grads.push((flat, op, grads));
                }
            }
            d_streams[cell] += &d_nodes[0];
            d_streams[cell + 1] += &d_nodes[1];
        }
        let stem_grads = [
            x.t().dot(&d_streams[0]),
            d_streams[0].sum_axis(Axis(0)).insert_axis(Axis(0)),
            x.t().dot(&d_streams[1]),
            d_streams[1].sum_axis(Axis(0)).insert_axis(Axis(0)),
        ];

        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        for (p, g) in w.head.iter_mut().zip(&head_grads) {
            p.step(g, lr, mu, wd);
        }
        for (p, g) in w.stems.iter_mut().zip(&stem_grads) {
            p.step(g, lr, mu, wd);
        }
        for (flat, op, grads) in op_grads {
            for (p, g) in w.ops[flat][op].iter_mut().zip(&grads) {
                p.step(g, lr, mu, wd);
            }
        }
        Ok(loss)
    }

    /// One pass over the training split; returns validation accuracy.
    pub fn train_one_epoch(&self, arch: &Architecture) -> Result<f64, EvalError> {
        self.check_arch(arch)?;
        let mut guard = self.inner.lock().expect("supernet lock");
        let inner = &mut *guard;
        let lr = cosine_lr(self.config.learning_rate, inner.epochs_done, inner.budget);
        let mut order: Vec<usize> = (0..inner.train.len()).collect();
        order.shuffle(&mut rng::substream(
            self.config.seed,
            "supernet-batches",
            &[inner.epochs_done as u64],
        ));
        for batch in order.chunks(self.config.batch_size) {
            let x = inner.train.x.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| inner.train.y[i]).collect();
            self.step(&mut inner.weights, arch, &x, &y, lr)?;
        }
        inner.epochs_done += 1;
        Ok(self.accuracy_on(&inner.weights, arch, &inner.val))
    }

    /// Trains `arch` alone from fresh weights for `epochs` epochs with the
    /// cosine horizon set to `epochs`; returns the final validation accuracy.
    pub fn retrain(spec: &SearchSpaceSpec, config: &SupernetConfig, arch: &Architecture, epochs: usize) -> Result<f64> {
        let net = Self::new(spec, config.clone())?;
        net.set_budget(epochs);
        let mut acc = net
            .accuracy(arch)
            .map_err(|source| Error::Evaluator { round: 0, source })?;
        for _ in 0..epochs {
            acc = net
                .train_one_epoch(arch)
                .map_err(|source| Error::Evaluator { round: 0, source })?;
        }
        Ok(acc)
    }
}

/// `lr0 * (1 + cos(pi * step / horizon)) / 2`, zero past the horizon.
pub fn cosine_lr(lr0: f64, step: usize, horizon: usize) -> f64 {
    let t = (step.min(horizon)) as f64 / horizon.max(1) as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * t).cos())
}

impl Evaluator<f64> for MicroSupernet {
    fn begin_round(&mut self, info: &RoundInfo, _architectures: &[Architecture]) -> Result<(), EvalError> {
        let inner = self.inner.get_mut().expect("supernet lock");
        inner.budget = info.total_epoch_budget.max(1);
        if self.config.reset_each_round && info.round > 1 {
            inner.weights = Weights::init(&self.config, &self.kinds, self.spec.num_flat_edges());
        }
        Ok(())
    }

    fn train_epoch(&self, _ctx: &EpochContext, arch: &Architecture) -> Result<f64, EvalError> {
        self.train_one_epoch(arch)
    }

    fn description(&self) -> String {
        format!(
            "micro supernet ({} ops, width {}, {:?} data {}+{})",
            self.kinds.len(),
            self.config.width,
            self.config.dataset,
            self.config.n_train,
            self.config.n_val
        )
    }
}
