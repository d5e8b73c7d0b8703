//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or argument error, 2 runtime
//! error, 3 an empirical error rate whose lower confidence limit lies above
//! a non-vacuous bound.

pub mod config;
pub mod report;

use crate::engine::{Checkpoint, Evaluator, Search, SearchResult, CHECKPOINT_FILE};
use crate::error::Error;
use crate::oracles::{
    generate_benchmark, EpochClock, MicroSupernet, NoiseParams, SyntheticOracle, TabularBenchmark, TabularOracle,
};
use crate::space::SearchSpaceSpec;
use crate::theory::{self, BoundParams, MonteCarloConfig};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use config::{Config, GapKind, OracleKind};
use serde::Serialize;
use serde_json::json;
use std::ffi::OsString;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULT_FILE: &str = "result.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Parser)]
#[command(name = "ddpnas", version, about = "Distribution pruning architecture search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a pruning search and write its manifest, event log, checkpoints and result.
    Search(SearchArgs),
    /// Tabulate per-epoch synthetic metrics for every architecture of a small space.
    BenchGen(BenchGenArgs),
    /// Print closed-form error bounds over a range of epochs.
    Bound(BoundArgs),
    /// Compare Monte Carlo pruning-error rates with the closed-form bound.
    ValidateBound(ValidateArgs),
    /// Summarize an event log and write plot-ready CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// `section.key=value` overrides.
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BenchGenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Comma-separated operation names.
    #[arg(long, value_delimiter = ',')]
    pub ops: Option<Vec<String>>,
    #[arg(long)]
    pub cell_types: Option<usize>,
    #[arg(long)]
    pub landscape: Option<PathBuf>,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cap: Option<u64>,
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub e_star: usize,
    #[arg(long)]
    pub zeta: f64,
    /// Alive operations at the prune (`|O|`).
    #[arg(long)]
    pub ops_count: usize,
    /// Largest alive count of the search; defaults to `--ops-count`.
    #[arg(long)]
    pub ops_count_max: Option<usize>,
    /// Pruning steps summed by the total bound; defaults to `--ops-count`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Single epoch; otherwise `--e-t-from..=--e-t-to`.
    #[arg(long)]
    pub e_t: Option<usize>,
    #[arg(long)]
    pub e_t_from: Option<usize>,
    #[arg(long)]
    pub e_t_to: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides bound.trials.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub log: PathBuf,
    /// Directory for the CSVs; defaults to the log's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

fn config_err(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn runtime_err(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Search(a) => cmd_search(&a),
        Command::BenchGen(a) => cmd_bench_gen(&a),
        Command::Bound(a) => cmd_bound(&a),
        Command::ValidateBound(a) => cmd_validate_bound(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

fn with_flags(overrides: &[String], flags: &[(&str, Option<String>)]) -> Vec<String> {
    let mut all = overrides.to_vec();
    for (key, value) in flags {
        if let Some(v) = value {
            all.push(format!("{key}={v}"));
        }
    }
    all
}

fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn space_summary(spec: &SearchSpaceSpec) -> serde_json::Value {
    json!({
        "num_nodes": spec.num_nodes,
        "operations": spec.operations.iter().map(|o| o.name.clone()).collect::<Vec<_>>(),
        "cell_types": spec.num_cell_types,
        "edges_per_cell": spec.edges.len(),
        "cell_structures": spec.space_size().to_string(),
        "architectures": spec.architecture_count().to_string(),
    })
}

fn build_evaluator(config: &Config, spec: &SearchSpaceSpec) -> anyhow::Result<Box<dyn Evaluator<f64>>> {
    Ok(match config.oracle.kind {
        OracleKind::Synthetic => {
            let landscape = config.landscape(spec, config.oracle_noise())?;
            Box::new(SyntheticOracle::new(landscape, config.oracle.clock, config.search.seed))
        }
        OracleKind::Tabular => {
            let path = config
                .oracle
                .benchmark
                .as_ref()
                .context("oracle.benchmark is not set")?;
            let bench = TabularBenchmark::<f64>::load(path).with_context(|| format!("benchmark {}", path.display()))?;
            Box::new(TabularOracle::new(bench, spec.clone())?)
        }
        OracleKind::Supernet => Box::new(MicroSupernet::new(spec, config.supernet_config())?),
    })
}

/// Keeps the log lines of rounds `<= rounds_completed`.
fn trim_log(path: &Path, rounds_completed: usize) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let mut kept = String::new();
    for line in text.lines() {
        let Ok(v) = serde_json::from_str::<serde_json::Value>(line) else {
            break;
        };
        match v.get("round").and_then(|r| r.as_u64()) {
            Some(r) if (r as usize) <= rounds_completed => {
                kept.push_str(line);
                kept.push('\n');
            }
            _ => break,
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}

#[derive(Serialize)]
struct ResultDocument<'a> {
    final_architecture: &'a str,
    k_per_round: &'a [usize],
    total_trained_epochs: usize,
    wall_time: f64,
    finished_at_unix: f64,
    prune_log: Vec<serde_json::Value>,
    score_history: Vec<serde_json::Value>,
}

fn result_document(spec: &SearchSpaceSpec, res: &SearchResult<f64>) -> serde_json::Value {
    let prune_log = res
        .prune_log
        .iter()
        .map(|p| json!({"round": p.round + 1, "edge": p.edge.to_string(), "op": spec.op_name(p.op), "prob": p.prob}))
        .collect();
    let score_history = res
        .score_history
        .iter()
        .map(|t| serde_json::to_value(&t.scores).unwrap_or_default())
        .collect();
    serde_json::to_value(ResultDocument {
        final_architecture: &res.final_encoded,
        k_per_round: &res.k_per_round,
        total_trained_epochs: res.total_trained_epochs,
        wall_time: res.wall_time,
        finished_at_unix: unix_now(),
        prune_log,
        score_history,
    })
    .unwrap_or_default()
}

fn cmd_search(args: &SearchArgs) -> CmdResult {
    let overrides = with_flags(
        &args.overrides,
        &[
            ("search.seed", args.seed.map(|s| s.to_string())),
            ("search.jobs", args.jobs.map(|j| j.to_string())),
        ],
    );
    let mut config = Config::load(args.config.as_deref(), &overrides).map_err(config_err)?;
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    let spec = config.space().map_err(config_err)?;
    let mut evaluator = build_evaluator(&config, &spec).map_err(config_err)?;

    let dir = config.output.dir.clone();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime_err)?;
    let events_path = dir.join(EVENTS_FILE);
    let checkpoint_dir = dir.join(CHECKPOINT_DIR);

    let checkpoint = if args.resume {
        let cp = Checkpoint::<f64>::load(&checkpoint_dir.join(CHECKPOINT_FILE))
            .context("loading checkpoint")
            .map_err(runtime_err)?;
        trim_log(&events_path, cp.rounds_completed).map_err(runtime_err)?;
        Some(cp)
    } else {
        let manifest = json!({
            "tool": "ddpnas",
            "version": env!("CARGO_PKG_VERSION"),
            "command": "search",
            "config": config,
            "spec": space_summary(&spec),
            "oracle": evaluator.description(),
            "seed": config.search.seed,
            "started_at_unix": unix_now(),
            "outputs": {
                "events": EVENTS_FILE,
                "checkpoints": CHECKPOINT_DIR,
                "result": RESULT_FILE,
            },
        });
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_vec_pretty(&manifest).map_err(runtime_err)?,
        )
        .map_err(runtime_err)?;
        None
    };

    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(args.resume)
        .write(true)
        .truncate(!args.resume)
        .open(&events_path)
        .with_context(|| format!("opening {}", events_path.display()))
        .map_err(runtime_err)?;
    let mut log = BufWriter::new(file);
    let mut search = Search::new(&spec, config.search_config())
        .event_log(&mut log)
        .checkpoints(&checkpoint_dir);
    if let Some(cp) = checkpoint {
        search = search.resume(cp);
    }
    let result = search.run(evaluator.as_mut());
    log.flush().map_err(runtime_err)?;
    let result = result.map_err(|e| match e {
        Error::InvalidArgument(_) => config_err(e),
        other => runtime_err(anyhow::Error::new(other).context("search failed")),
    })?;

    let doc = result_document(&spec, &result);
    std::fs::write(
        dir.join(RESULT_FILE),
        serde_json::to_vec_pretty(&doc).map_err(runtime_err)?,
    )
    .map_err(runtime_err)?;
    println!("{}", result.final_encoded);
    println!(
        "rounds {} | trained epochs {} | wall time {:.3}s | output {}",
        result.k_per_round.len(),
        result.total_trained_epochs,
        result.wall_time,
        dir.display()
    );
    Ok(0)
}

fn cmd_bench_gen(args: &BenchGenArgs) -> CmdResult {
    let overrides = with_flags(
        &args.overrides,
        &[
            ("spec.num_nodes", args.nodes.map(|n| n.to_string())),
            (
                "spec.operations",
                args.ops.as_ref().map(|ops| {
                    let quoted: Vec<String> = ops.iter().map(|o| format!("{o:?}")).collect();
                    format!("[{}]", quoted.join(","))
                }),
            ),
            ("spec.cell_types", args.cell_types.map(|n| n.to_string())),
            ("spec.enumeration_cap", args.cap.map(|n| n.to_string())),
            ("search.seed", args.seed.map(|n| n.to_string())),
            (
                "oracle.landscape",
                args.landscape
                    .as_ref()
                    .map(|p| format!("{:?}", p.display().to_string())),
            ),
        ],
    );
    let config = Config::load(args.config.as_deref(), &overrides).map_err(config_err)?;
    if args.epochs == 0 {
        return Err(config_err(anyhow::anyhow!("--epochs must be at least 1")));
    }
    let spec = config.space().map_err(config_err)?;
    let landscape = config.landscape(&spec, config.oracle_noise()).map_err(config_err)?;
    let bench = generate_benchmark(
        &spec,
        &landscape,
        args.epochs,
        config.search.seed,
        config.spec.enumeration_cap,
    )
    .map_err(runtime_err)?;
    bench.save(&args.out).map_err(runtime_err)?;
    println!(
        "{} architectures x {} epochs -> {}",
        bench.entries.len(),
        bench.epochs,
        args.out.display()
    );
    Ok(0)
}

fn cmd_bound(args: &BoundArgs) -> CmdResult {
    let params = BoundParams {
        noise: NoiseParams {
            beta: args.beta,
            gamma: args.gamma,
            e_star: args.e_star,
        },
        zeta: args.zeta,
        ops_count: args.ops_count,
        ops_count_max: args.ops_count_max.unwrap_or(args.ops_count),
    };
    params.validate().map_err(config_err)?;
    let k = args.k.unwrap_or(args.ops_count);
    let (from, to) = match (args.e_t, args.e_t_from, args.e_t_to) {
        (Some(e), None, None) => (e, e),
        (None, from, to) => (from.unwrap_or(1), to.unwrap_or(args.e_star)),
        _ => return Err(config_err(anyhow::anyhow!("use either --e-t or --e-t-from/--e-t-to"))),
    };
    if from < 1 || from > to || to > args.e_star {
        return Err(config_err(anyhow::anyhow!(
            "invalid e_t range {from}..={to} for e_star {}",
            args.e_star
        )));
    }
    let mut csv = String::from("e_t,K,sigma,delta,bound_exact,bound_simplified\n");
    let delta = theory::delta_threshold(&params);
    for e_t in from..=to {
        let sigma = theory::sigma(&params, e_t).map_err(config_err)?;
        let total = theory::total_error_bound(&params, e_t, k).map_err(config_err)?;
        csv.push_str(&format!(
            "{e_t},{k},{sigma},{delta},{},{}\n",
            total.exact, total.simplified
        ));
    }
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(runtime_err)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct CellSummary {
    beta: f64,
    gamma: f64,
    zeta: f64,
    csv: String,
    trials: usize,
    errors: usize,
    rate: f64,
    ci_low: f64,
    ci_high: f64,
    informative_rows: usize,
    rows_upper_above_bound: usize,
    rows_violating: usize,
    deviation_mismatch: bool,
    rounds: Vec<theory::RoundStats>,
}

fn cmd_validate_bound(args: &ValidateArgs) -> CmdResult {
    let overrides = with_flags(
        &args.overrides,
        &[
            ("bound.trials", args.trials.map(|t| t.to_string())),
            ("search.seed", args.seed.map(|s| s.to_string())),
        ],
    );
    let mut config = Config::load(args.config.as_deref(), &overrides).map_err(config_err)?;
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    config.oracle.clamp = config.bound.clamp;
    let spec = config.space().map_err(config_err)?;
    let k0 = spec.num_ops();
    let e_star = config.bound.e_star.unwrap_or_else(|| config.epoch_budget());
    let dir = config.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(runtime_err)?;

    let mut cells = Vec::new();
    let mut violated = false;
    for &beta in &config.bound.beta {
        for &gamma in &config.bound.gamma {
            let bound_noise = NoiseParams { beta, gamma, e_star };
            let oracle_noise = NoiseParams {
                beta: config.bound.oracle_beta.unwrap_or(beta),
                gamma: config.bound.oracle_gamma.unwrap_or(gamma),
                e_star,
            };
            let landscape = config.landscape(&spec, oracle_noise).map_err(config_err)?;
            let zeta = match config.bound.zeta {
                Some(z) => z,
                None => {
                    let gap = match config.bound.gap {
                        GapKind::Utility => landscape.min_utility_gap(),
                        GapKind::Quality => landscape.min_quality_gap(),
                    };
                    config.bound.zeta_gap_multiple * gap
                }
            };
            let params = BoundParams {
                noise: bound_noise,
                zeta,
                ops_count: k0,
                ops_count_max: k0,
            };
            params.validate().map_err(config_err)?;
            let mc = MonteCarloConfig {
                search: config.search_config(),
                clock: config.bound.clock,
                trials: config.bound.trials,
                seed: config.search.seed,
                jobs: args.jobs.unwrap_or(0),
                bound_noise,
                enumeration_cap: config.spec.enumeration_cap,
            };
            let report = theory::monte_carlo_error_rate(&spec, &landscape, &mc).map_err(|e| match e {
                Error::NonUniqueOptimum(_) | Error::InvalidArgument(_) | Error::SpaceTooLarge { .. } => config_err(e),
                other => runtime_err(other),
            })?;
            let rows = theory::bound_rows(&report, &params).map_err(runtime_err)?;
            let name = format!("bound_beta{beta}_gamma{gamma}.csv");
            let file = std::fs::File::create(dir.join(&name)).map_err(runtime_err)?;
            theory::write_bound_csv(BufWriter::new(file), &rows).map_err(runtime_err)?;

            let informative = rows.iter().filter(|r| !r.is_vacuous()).count();
            let upper = rows.iter().filter(|r| r.upper_exceeds()).count();
            let violating = rows.iter().filter(|r| r.violates()).count();
            violated |= violating > 0;
            println!(
                "beta={beta} gamma={gamma} zeta={zeta:.6}: error rate {:.4} [{:.4}, {:.4}] over {} trials; {informative} informative rows, {upper} with upper limit above bound, {violating} violating",
                report.rate, report.ci_low, report.ci_high, report.trials
            );
            for r in report.rounds.iter().filter(|r| r.deviation_mismatch()) {
                println!(
                    "  deviation mismatch in round {}: observed {:.6}, bound model {:.6}",
                    r.round, r.empirical_deviation, r.model_deviation
                );
            }
            cells.push(CellSummary {
                beta,
                gamma,
                zeta,
                csv: name,
                trials: report.trials,
                errors: report.errors,
                rate: report.rate,
                ci_low: report.ci_low,
                ci_high: report.ci_high,
                informative_rows: informative,
                rows_upper_above_bound: upper,
                rows_violating: violating,
                deviation_mismatch: report.deviation_mismatch(),
                rounds: report.rounds,
            });
        }
    }
    let summary = json!({
        "config": config,
        "clock": match config.bound.clock { EpochClock::Search => "search", EpochClock::PerArchitecture => "per_architecture" },
        "e_star": e_star,
        "cells": cells,
        "violated": violated,
    });
    std::fs::write(
        dir.join("validate_bound.json"),
        serde_json::to_vec_pretty(&summary).map_err(runtime_err)?,
    )
    .map_err(runtime_err)?;
    Ok(if violated { 3 } else { 0 })
}

fn cmd_report(args: &ReportArgs) -> CmdResult {
    let file = std::fs::File::open(&args.log)
        .with_context(|| format!("opening {}", args.log.display()))
        .map_err(config_err)?;
    let reader: Box<dyn BufRead> = Box::new(std::io::BufReader::new(file));
    let rep = report::replay(reader).map_err(runtime_err)?;
    report::check_normalized(&rep, crate::distribution::NORMALIZATION_TOL).map_err(runtime_err)?;
    let out = match &args.out {
        Some(d) => d.clone(),
        None => args.log.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !out.as_os_str().is_empty() {
        std::fs::create_dir_all(&out).map_err(runtime_err)?;
    }
    std::fs::write(out.join("probabilities.csv"), rep.probabilities_csv()).map_err(runtime_err)?;
    std::fs::write(out.join("prunes.csv"), rep.prunes_csv()).map_err(runtime_err)?;
    print!("{}", rep.summary().map_err(runtime_err)?);
    Ok(0)
}
