//! Run configuration: one TOML document with `spec`, `search`, `oracle`,
//! `bound` and `output` tables. Every key has a default, and
//! `section.key=value` overrides are applied before validation.
//!
//! ```toml
//! [spec]
//! num_nodes = 2
//! operations = ["op0", "op1", "op2", "op3"]   # or num_ops = 4
//! cell_types = 1
//!
//! [search]
//! epochs_per_round = 3
//! temperature = 0.05
//! seed = 0
//!
//! [oracle]
//! kind = "synthetic"      # synthetic | tabular | supernet
//! beta = 0.0
//! gamma = 0.0
//!
//! [bound]
//! beta = [0.002, 0.005]
//! gamma = [0.005, 0.01]
//!
//! [output]
//! dir = "runs/example"
//! ```

use crate::engine::{total_epoch_budget, MetricDirection, SearchConfig};
use crate::oracles::data::DatasetKind;
use crate::oracles::{EpochClock, NoiseParams, SupernetConfig, SyntheticLandscape};
use crate::rng::{self, label};
use crate::space::SearchSpaceSpec;
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub spec: SpecSection,
    pub search: SearchSection,
    pub oracle: OracleSection,
    pub bound: BoundSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecSection {
    pub num_nodes: usize,
    /// Operation names; when absent, `num_ops` names `op0..` are generated.
    pub operations: Option<Vec<String>>,
    pub num_ops: usize,
    pub cell_types: usize,
    /// Largest space brute-force enumeration may visit.
    pub enumeration_cap: u64,
}

impl Default for SpecSection {
    fn default() -> Self {
        Self {
            num_nodes: 2,
            operations: None,
            num_ops: 4,
            cell_types: 1,
            enumeration_cap: 1 << 22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub epochs_per_round: usize,
    pub temperature: f64,
    pub ema: Option<f64>,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub direction: MetricDirection,
    pub jobs: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::<f64>::default();
        Self {
            epochs_per_round: d.epochs_per_round,
            temperature: d.temperature,
            ema: d.ema_coeff,
            seed: d.seed,
            checkpoint_every: d.checkpoint_every,
            direction: d.direction,
            jobs: d.jobs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Synthetic,
    Tabular,
    Supernet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub kind: OracleKind,
    /// Landscape file; when absent a separable landscape is generated.
    pub landscape: Option<PathBuf>,
    pub landscape_seed: u64,
    pub utility_low: f64,
    pub utility_high: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Defaults to the search's total epoch budget.
    pub e_star: Option<usize>,
    pub clock: EpochClock,
    pub clamp: bool,
    /// Benchmark file for the tabular oracle.
    pub benchmark: Option<PathBuf>,
    pub width: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dataset: DatasetKind,
    pub n_train: usize,
    pub n_val: usize,
    pub data_seed: u64,
    pub reset_each_round: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        let s = SupernetConfig::default();
        Self {
            kind: OracleKind::Synthetic,
            landscape: None,
            landscape_seed: 0,
            utility_low: 0.1,
            utility_high: 0.9,
            beta: 0.0,
            gamma: 0.0,
            e_star: None,
            clock: EpochClock::PerArchitecture,
            clamp: true,
            benchmark: None,
            width: s.width,
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            weight_decay: s.weight_decay,
            batch_size: s.batch_size,
            dataset: s.dataset,
            n_train: s.n_train,
            n_val: s.n_val,
            data_seed: s.data_seed,
            reset_each_round: s.reset_each_round,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    /// Smallest per-edge difference between best and runner-up utility.
    #[default]
    Utility,
    /// The same difference divided by the number of edges, i.e. on the
    /// scale of architecture quality.
    Quality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Defaults to the search's total epoch budget.
    pub e_star: Option<usize>,
    /// Fixed threshold scale; otherwise `zeta_gap_multiple` times the gap.
    pub zeta: Option<f64>,
    pub zeta_gap_multiple: f64,
    pub gap: GapKind,
    pub trials: usize,
    pub clock: EpochClock,
    /// Landscape noise when it should differ from the bound's noise model.
    pub oracle_beta: Option<f64>,
    pub oracle_gamma: Option<f64>,
    pub clamp: bool,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            beta: vec![0.002, 0.005],
            gamma: vec![0.005, 0.01],
            e_star: None,
            zeta: None,
            zeta_gap_multiple: 4.0,
            gap: GapKind::Utility,
            trials: 1000,
            clock: EpochClock::Search,
            oracle_beta: None,
            oracle_gamma: None,
            clamp: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("ddpnas-out"),
        }
    }
}

/// Sets `section.key` in `table`, reading `value` as a TOML value and
/// falling back to a plain string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not key=value"))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .with_context(|| format!("override key `{path}` must be section.key"))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(section_table) = entry else {
        bail!("`{section}` is not a table");
    };
    section_table.insert(key.to_string(), value);
    Ok(())
}

impl Config {
    pub fn parse(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Config = toml::Value::Table(table).try_into().context("invalid config")?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (or the defaults when `None`) and resolves relative file
    /// references against the config's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut config = Self::parse(&text, overrides)?;
        if let Some(base) = path.and_then(Path::parent) {
            for file in [&mut config.oracle.landscape, &mut config.oracle.benchmark]
                .into_iter()
                .flatten()
            {
                if file.is_relative() {
                    *file = base.join(&*file);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.space()?;
        self.search_config().validate()?;
        if self.bound.trials == 0 {
            bail!("bound.trials must be at least 1");
        }
        if self.bound.beta.is_empty() || self.bound.gamma.is_empty() {
            bail!("bound.beta and bound.gamma need at least one value");
        }
        if !(self.bound.zeta_gap_multiple > 0.0) {
            bail!("bound.zeta_gap_multiple must be positive");
        }
        if !(self.oracle.utility_low < self.oracle.utility_high) {
            bail!("oracle.utility_low must be below oracle.utility_high");
        }
        if self.oracle.kind == OracleKind::Tabular && self.oracle.benchmark.is_none() {
            bail!("oracle.kind = \"tabular\" needs oracle.benchmark");
        }
        Ok(())
    }

    pub fn operation_names(&self) -> Vec<String> {
        match &self.spec.operations {
            Some(ops) => ops.clone(),
            None => (0..self.spec.num_ops).map(|i| format!("op{i}")).collect(),
        }
    }

    pub fn space(&self) -> anyhow::Result<SearchSpaceSpec> {
        Ok(SearchSpaceSpec::build(
            self.spec.num_nodes,
            &self.operation_names(),
            self.spec.cell_types,
        )?)
    }

    pub fn search_config(&self) -> SearchConfig<f64> {
        SearchConfig {
            epochs_per_round: self.search.epochs_per_round,
            temperature: self.search.temperature,
            ema_coeff: self.search.ema,
            seed: self.search.seed,
            checkpoint_every: self.search.checkpoint_every,
            direction: self.search.direction,
            jobs: self.search.jobs,
        }
    }

    pub fn epoch_budget(&self) -> usize {
        total_epoch_budget(self.operation_names().len(), self.search.epochs_per_round)
    }

    pub fn oracle_noise(&self) -> NoiseParams<f64> {
        NoiseParams {
            beta: self.oracle.beta,
            gamma: self.oracle.gamma,
            e_star: self.oracle.e_star.unwrap_or_else(|| self.epoch_budget()),
        }
    }

    /// The configured landscape file, or a generated separable landscape
    /// with the given noise.
    pub fn landscape(
        &self,
        spec: &SearchSpaceSpec,
        noise: NoiseParams<f64>,
    ) -> anyhow::Result<SyntheticLandscape<f64>> {
        let mut landscape = match &self.oracle.landscape {
            Some(path) => {
                let mut l =
                    SyntheticLandscape::load(path, spec).with_context(|| format!("landscape {}", path.display()))?;
                l.noise = noise;
                l
            }
            None => {
                let mut r = rng::substream(self.oracle.landscape_seed, label::LANDSCAPE, &[]);
                SyntheticLandscape::random_separable(
                    spec,
                    noise,
                    self.oracle.utility_low,
                    self.oracle.utility_high,
                    &mut r,
                )
            }
        };
        landscape.clamp_metric = self.oracle.clamp;
        Ok(landscape)
    }

    pub fn supernet_config(&self) -> SupernetConfig {
        SupernetConfig {
            width: self.oracle.width,
            learning_rate: self.oracle.learning_rate,
            momentum: self.oracle.momentum,
            weight_decay: self.oracle.weight_decay,
            batch_size: self.oracle.batch_size,
            dataset: self.oracle.dataset,
            n_train: self.oracle.n_train,
            n_val: self.oracle.n_val,
            data_seed: self.oracle.data_seed,
            seed: self.search.seed,
            reset_each_round: self.oracle.reset_each_round,
            default_budget: self.epoch_budget(),
            ..SupernetConfig::default()
        }
    }
}
