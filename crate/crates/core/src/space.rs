//! Cell-based DAG search space.
//!
//! A cell has two input nodes (`-1` and `0`) and `num_nodes` intermediate
//! nodes `1..=num_nodes`. Every pair `(i, j)` with `i < j` is an edge, so a
//! cell with `M` intermediate nodes has `M(M+3)/2` edges. An architecture
//! picks one operation per edge of every cell type; internally the edges of
//! all cell types form one flat list (cell-major, then canonical edge order).

use crate::error::{Error, Result};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

/// One entry of the operation vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperationId {
    pub index: usize,
    pub name: String,
}

/// Directed edge `source -> target` inside a cell.
///
/// Ordered by `(target, source)`, which is the canonical edge order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeId {
    pub source: i32,
    pub target: i32,
}

impl EdgeId {
    pub fn new(source: i32, target: i32) -> Result<Self> {
        if source < -1 || target < 1 || source >= target {
            return Err(Error::InvalidSpace(format!(
                "edge ({source},{target}) violates -1 <= source < target, target >= 1"
            )));
        }
        Ok(Self { source, target })
    }
}

impl Ord for EdgeId {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.target, self.source).cmp(&(other.target, other.source))
    }
}

impl PartialOrd for EdgeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e({},{})", self.source, self.target)
    }
}

/// An edge of a particular cell type; the unit the search engine works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub cell: usize,
    pub edge: EdgeId,
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cell{}/{}", self.cell, self.edge)
    }
}

impl std::str::FromStr for EdgeKey {
    type Err = Error;

    /// Parses `cell<t>/e(<i>,<j>)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Decode(format!("malformed edge `{s}`"));
        let rest = s.strip_prefix("cell").ok_or_else(bad)?;
        let (cell, rest) = rest.split_once('/').ok_or_else(bad)?;
        let cell: usize = cell.parse().map_err(|_| bad())?;
        let inner = rest
            .strip_prefix("e(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (i, j) = inner.split_once(',').ok_or_else(bad)?;
        let source: i32 = i.trim().parse().map_err(|_| bad())?;
        let target: i32 = j.trim().parse().map_err(|_| bad())?;
        let edge = EdgeId::new(source, target).map_err(|_| bad())?;
        Ok(EdgeKey { cell, edge })
    }
}

/// The search space: DAG shape, operation vocabulary and number of cell types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    pub num_nodes: usize,
    pub edges: Vec<EdgeId>,
    pub operations: Vec<OperationId>,
    pub num_cell_types: usize,
}

/// Number of edges of a fully connected cell with two input nodes.
pub fn edge_count(num_nodes: usize) -> usize {
    num_nodes * (num_nodes + 3) / 2
}

/// `cell_types * ops^edges`, the number of distinct cell structures.
pub fn count_cell_structures(num_edges: usize, num_ops: usize, cell_types: usize) -> BigUint {
    BigUint::from(cell_types) * BigUint::from(num_ops).pow(num_edges as u32)
}

fn valid_op_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| !c.is_whitespace() && !matches!(c, ';' | '=' | ',' | '/' | '(' | ')' | '"'))
}

impl SearchSpaceSpec {
    /// Builds the fully connected cell space.
    pub fn build<S: AsRef<str>>(num_nodes: usize, operations: &[S], num_cell_types: usize) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidSpace("num_nodes must be at least 1".into()));
        }
        if num_cell_types == 0 {
            return Err(Error::InvalidSpace("num_cell_types must be at least 1".into()));
        }
        if operations.len() < 2 {
            return Err(Error::InvalidSpace(format!(
                "need at least 2 operations, got {}",
                operations.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut ops = Vec::with_capacity(operations.len());
        for (index, name) in operations.iter().enumerate() {
            let name = name.as_ref();
            if !valid_op_name(name) {
                return Err(Error::InvalidSpace(format!("invalid operation name `{name}`")));
            }
            if !seen.insert(name) {
                return Err(Error::InvalidSpace(format!("duplicate operation name `{name}`")));
            }
            ops.push(OperationId {
                index,
                name: name.to_string(),
            });
        }
        let mut edges = Vec::with_capacity(edge_count(num_nodes));
        for target in 1..=num_nodes as i32 {
            for source in -1..target {
                edges.push(EdgeId { source, target });
            }
        }
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        Ok(Self {
            num_nodes,
            edges,
            operations: ops,
            num_cell_types,
        })
    }

    pub fn num_ops(&self) -> usize {
        self.operations.len()
    }

    /// Number of edges over all cell types.
    pub fn num_flat_edges(&self) -> usize {
        self.edges.len() * self.num_cell_types
    }

    /// Edges of all cell types in engine order.
    pub fn flat_edges(&self) -> Vec<EdgeKey> {
        (0..self.num_cell_types)
            .flat_map(|cell| self.edges.iter().map(move |&edge| EdgeKey { cell, edge }))
            .collect()
    }

    pub fn flat_index(&self, key: &EdgeKey) -> Option<usize> {
        if key.cell >= self.num_cell_types {
            return None;
        }
        let pos = self.edges.binary_search(&key.edge).ok()?;
        Some(key.cell * self.edges.len() + pos)
    }

    pub fn edge_key(&self, flat: usize) -> EdgeKey {
        let n = self.edges.len();
        EdgeKey {
            cell: flat / n,
            edge: self.edges[flat % n],
        }
    }

    pub fn op_index(&self, name: &str) -> Option<usize> {
        self.operations.iter().position(|o| o.name == name)
    }

    pub fn op_name(&self, index: usize) -> &str {
        &self.operations[index].name
    }

    /// `num_cell_types * K^|edges|`: the number of cell structures.
    pub fn space_size(&self) -> BigUint {
        count_cell_structures(self.edges.len(), self.num_ops(), self.num_cell_types)
    }

    /// `K^(num_cell_types * |edges|)`: the number of full architectures
    /// (one assignment per cell type). Equals [`space_size`](Self::space_size)
    /// for a single cell type.
    pub fn architecture_count(&self) -> BigUint {
        BigUint::from(self.num_ops()).pow(self.num_flat_edges() as u32)
    }

    /// Enumerates every architecture in lexicographic order over
    /// (flat edge order, operation index), the first edge varying slowest.
    pub fn enumerate(&self, cap: u64) -> Result<ArchitectureIter> {
        let count = self.architecture_count();
        if count > BigUint::from(cap) {
            return Err(Error::SpaceTooLarge {
                cell_structures: self.space_size(),
                architectures: count,
                cap,
            });
        }
        Ok(ArchitectureIter {
            next: Some(vec![0; self.num_flat_edges()]),
            num_ops: self.num_ops(),
        })
    }

    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        if arch.ops.len() != self.num_flat_edges() {
            return Err(Error::Decode(format!(
                "architecture assigns {} edges, space has {}",
                arch.ops.len(),
                self.num_flat_edges()
            )));
        }
        if let Some(&bad) = arch.ops.iter().find(|&&op| op >= self.num_ops()) {
            return Err(Error::Decode(format!("operation index {bad} out of range")));
        }
        Ok(())
    }

    /// Canonical string: `cell<t>/e(<i>,<j>)=<op>` joined by `;`.
    pub fn encode(&self, arch: &Architecture) -> String {
        let mut out = String::new();
        for (flat, &op) in arch.ops.iter().enumerate() {
            if flat > 0 {
                out.push(';');
            }
            out.push_str(&format!("{}={}", self.edge_key(flat), self.op_name(op)));
        }
        out
    }

    pub fn decode(&self, s: &str) -> Result<Architecture> {
        let mut ops: Vec<Option<usize>> = vec![None; self.num_flat_edges()];
        for segment in s.split(';') {
            let (edge, op) = segment
                .split_once('=')
                .ok_or_else(|| Error::Decode(format!("segment `{segment}` lacks `=`")))?;
            let key: EdgeKey = edge.parse()?;
            let flat = self
                .flat_index(&key)
                .ok_or_else(|| Error::Decode(format!("unknown edge `{edge}`")))?;
            let op = self
                .op_index(op)
                .ok_or_else(|| Error::Decode(format!("unknown operation `{op}`")))?;
            if ops[flat].replace(op).is_some() {
                return Err(Error::Decode(format!("edge `{edge}` assigned twice")));
            }
        }
        let ops = ops
            .into_iter()
            .enumerate()
            .map(|(flat, op)| {
                op.ok_or_else(|| Error::Decode(format!("missing assignment for edge `{}`", self.edge_key(flat))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Architecture { ops })
    }
}

/// One operation index per flat edge: the compact form of a one-hot
/// selection on every edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    pub ops: Vec<usize>,
}

impl Architecture {
    pub fn new(ops: Vec<usize>) -> Self {
        Self { ops }
    }

    pub fn op_at(&self, flat_edge: usize) -> usize {
        self.ops[flat_edge]
    }

    /// One-hot row for one edge, `K` entries.
    pub fn one_hot(&self, flat_edge: usize, num_ops: usize) -> Vec<u8> {
        let mut row = vec![0; num_ops];
        row[self.ops[flat_edge]] = 1;
        row
    }
}

/// Odometer over all architectures; see [`SearchSpaceSpec::enumerate`].
#[derive(Debug, Clone)]
pub struct ArchitectureIter {
    next: Option<Vec<usize>>,
    num_ops: usize,
}

impl Iterator for ArchitectureIter {
    type Item = Architecture;

    fn next(&mut self) -> Option<Architecture> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut advanced = false;
        for digit in succ.iter_mut().rev() {
            *digit += 1;
            if *digit < self.num_ops {
                advanced = true;
                break;
            }
            *digit = 0;
        }
        if advanced {
            self.next = Some(succ);
        }
        Some(Architecture { ops: current })
    }
}
