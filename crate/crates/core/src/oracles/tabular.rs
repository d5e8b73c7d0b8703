//! Precomputed architecture -> per-epoch metric tables.
//!
//! File format, one record per line after the header:
//!
//! ```text
//! #ddp-bench v1 epochs=<n> spec=<M>,<K>,<types>
//! <encoded-arch>\t<m1>,<m2>,...
//! ```

use super::SyntheticLandscape;
use crate::engine::{EpochContext, Evaluator};
use crate::error::{Error, EvalError, Result};
use crate::rng::{self, label};
use crate::scalar::Scalar;
use crate::space::{Architecture, SearchSpaceSpec};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::Mutex;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularBenchmark<T> {
    pub epochs: usize,
    /// `(num_nodes, num_ops, num_cell_types)` of the space the table covers.
    pub shape: (usize, usize, usize),
    pub entries: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> TabularBenchmark<T> {
    pub fn matches(&self, spec: &SearchSpaceSpec) -> bool {
        self.shape == (spec.num_nodes, spec.num_ops(), spec.num_cell_types)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let (m, k, types) = self.shape;
        writeln!(out, "#ddp-bench v1 epochs={} spec={m},{k},{types}", self.epochs)?;
        for (key, metrics) in &self.entries {
            let values: Vec<String> = metrics.iter().map(|m| m.to_string()).collect();
            writeln!(out, "{key}\t{}", values.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.ok_or(Error::BenchmarkFormat {
            line: 1,
            message: "empty file".into(),
        })?;
        let (epochs, shape) = parse_header(&header)?;
        let mut entries = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::BenchmarkFormat { line: line_no, message };
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| bad("missing tab separator".into()))?;
            let metrics = values
                .split(',')
                .map(|v| v.parse::<T>().map_err(|_| bad(format!("bad metric `{v}`"))))
                .collect::<Result<Vec<T>>>()?;
            if metrics.len() != epochs {
                return Err(bad(format!("{} metrics, header says {epochs}", metrics.len())));
            }
            if let Some(m) = metrics.iter().find(|m| !(**m >= T::zero() && **m <= T::one())) {
                return Err(bad(format!("metric {m} outside [0, 1]")));
            }
            if entries.insert(key.to_string(), metrics).is_some() {
                return Err(bad(format!("duplicate architecture `{key}`")));
            }
        }
        Ok(Self { epochs, shape, entries })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn parse_header(header: &str) -> Result<(usize, (usize, usize, usize))> {
    let bad = |m: &str| Error::BenchmarkFormat {
        line: 1,
        message: format!("{m}: `{header}`"),
    };
    let rest = header
        .strip_prefix("#ddp-bench v1 ")
        .ok_or_else(|| bad("expected `#ddp-bench v1` header"))?;
    let mut epochs = None;
    let mut shape = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("epochs", v)) => epochs = Some(v.parse().map_err(|_| bad("bad epochs"))?),
            Some(("spec", v)) => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|p| p.parse().map_err(|_| bad("bad spec")))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad("spec needs M,K,types"));
                }
                shape = Some((parts[0], parts[1], parts[2]));
            }
            _ => return Err(bad("unknown header field")),
        }
    }
    Ok((
        epochs.ok_or_else(|| bad("missing epochs"))?,
        shape.ok_or_else(|| bad("missing spec"))?,
    ))
}

/// Records `epochs` successive synthetic metrics for every architecture.
/// Each architecture draws from its own substream, keyed by its position in
/// the enumeration order.
pub fn generate_benchmark<T: Scalar>(
    spec: &SearchSpaceSpec,
    landscape: &SyntheticLandscape<T>,
    epochs: usize,
    seed: u64,
    cap: u64,
) -> Result<TabularBenchmark<T>> {
    landscape.check_shape(spec)?;
    if epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    let entries = spec
        .enumerate(cap)?
        .enumerate()
        .map(|(i, arch)| {
            let mut rng = rng::substream(seed, label::ORACLE, &[i as u64]);
            let metrics = (1..=epochs).map(|e| landscape.observe(&arch, e, &mut rng)).collect();
            (spec.encode(&arch), metrics)
        })
        .collect();
    Ok(TabularBenchmark {
        epochs,
        shape: (spec.num_nodes, spec.num_ops(), spec.num_cell_types),
        entries,
    })
}

/// Evaluator replaying a [`TabularBenchmark`].
#[derive(Debug)]
pub struct TabularOracle<T> {
    bench: TabularBenchmark<T>,
    spec: SearchSpaceSpec,
    counters: Mutex<HashMap<String, usize>>,
}

impl<T: Scalar> TabularOracle<T> {
    pub fn new(bench: TabularBenchmark<T>, spec: SearchSpaceSpec) -> Result<Self> {
        if !bench.matches(&spec) {
            return Err(Error::InvalidArgument(format!(
                "benchmark covers spec {:?}, search space is ({}, {}, {})",
                bench.shape,
                spec.num_nodes,
                spec.num_ops(),
                spec.num_cell_types
            )));
        }
        Ok(Self {
            bench,
            spec,
            counters: Mutex::new(HashMap::new()),
        })
    }

    pub fn benchmark(&self) -> &TabularBenchmark<T> {
        &self.bench
    }
}

impl<T: Scalar> Evaluator<T> for TabularOracle<T> {
    fn train_epoch(&self, _ctx: &EpochContext, arch: &Architecture) -> Result<T, EvalError> {
        let key = self.spec.encode(arch);
        let metrics = self
            .bench
            .entries
            .get(&key)
            .ok_or_else(|| EvalError::UnknownArchitecture(key.clone()))?;
        let mut counters = self.counters.lock().expect("counter lock");
        let e_t = counters.entry(key.clone()).or_insert(0);
        if *e_t >= metrics.len() {
            return Err(EvalError::EpochOverflow {
                key,
                available: metrics.len(),
                requested: *e_t + 1,
            });
        }
        *e_t += 1;
        Ok(metrics[*e_t - 1])
    }

    fn description(&self) -> String {
        format!(
            "tabular benchmark ({} architectures x {} epochs)",
            self.bench.entries.len(),
            self.bench.epochs
        )
    }

    fn supports_concurrency(&self) -> bool {
        true
    }
}
