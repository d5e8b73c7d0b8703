//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use ddpnas::distribution::{CategoricalState, NORMALIZATION_TOL};
use ddpnas::engine::{run_search, EpochContext, Evaluator, SearchConfig};
use ddpnas::estimator::ScoreTable;
use ddpnas::oracles::{
    generate_benchmark, EpochClock, MicroOp, MicroSupernet, NoiseParams, SupernetConfig, SyntheticLandscape,
    SyntheticOracle, TabularBenchmark,
};
use ddpnas::rng::{self, label};
use ddpnas::theory::{self, BoundParams};
use ddpnas::{Architecture, SearchSpaceSpec};
use rand::Rng;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_ddpnas");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn space(m: usize, k: usize, types: usize) -> SearchSpaceSpec {
    let ops: Vec<String> = (0..k).map(|i| format!("op{i}")).collect();
    SearchSpaceSpec::build(m, &ops, types).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn ctx(search_epoch: usize, stream: u64) -> EpochContext {
    EpochContext {
        round: 1,
        slot: 0,
        epoch: 1,
        search_epoch,
        stream_seed: stream,
    }
}

/// Noiseless recovery of the brute-force optimum on 100 seeds.
fn noiseless_recovery() -> Outcome {
    let started = Instant::now();
    let sp = space(2, 4, 1);
    let mut hits = 0;
    for seed in 0..100u64 {
        let landscape = SyntheticLandscape::<f64>::random_separable(
            &sp,
            NoiseParams::noiseless(27),
            0.1,
            0.9,
            &mut rng::substream(seed, label::LANDSCAPE, &[]),
        );
        // brute force: enumerate and evaluate every architecture once
        let probe = SyntheticOracle::new(landscape.clone(), EpochClock::PerArchitecture, seed);
        let mut best: Option<(Architecture, f64)> = None;
        for a in sp.enumerate(1 << 20).unwrap() {
            let m = probe.train_epoch(&ctx(1, 0), &a).unwrap();
            if best.as_ref().is_none_or(|(_, b)| m > *b) {
                best = Some((a, m));
            }
        }
        let (optimum, _) = best.unwrap();
        let mut oracle = SyntheticOracle::new(landscape, EpochClock::PerArchitecture, seed);
        let cfg = SearchConfig::<f64> {
            seed,
            ..Default::default()
        };
        let res = run_search(&sp, &mut oracle, &cfg).unwrap();
        if res.final_architecture == optimum {
            hits += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        hits == 100 && elapsed < Duration::from_secs(10),
        format!(
            "{hits}/100 seeds recovered the optimum in {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Budget identity for K0 = 8, T = 3.
fn budget_identity() -> Outcome {
    let sp = space(4, 8, 2);
    let landscape = SyntheticLandscape::<f64>::random_separable(
        &sp,
        NoiseParams {
            beta: 0.002,
            gamma: 0.01,
            e_star: 105,
        },
        0.1,
        0.9,
        &mut rng::substream(1, label::LANDSCAPE, &[]),
    );
    let mut oracle = SyntheticOracle::new(landscape, EpochClock::PerArchitecture, 1);
    let res = run_search(&sp, &mut oracle, &SearchConfig::default()).unwrap();
    let expected_prunes = 7 * sp.num_flat_edges();
    outcome(
        res.total_trained_epochs == 105 && res.total_trained_epochs < 150 && res.prune_log.len() == expected_prunes,
        format!(
            "trained epochs {}, prune events {} (expected {expected_prunes})",
            res.total_trained_epochs,
            res.prune_log.len()
        ),
    )
}

/// Bound validation over the default grid through the CLI.
fn bound_validation(dir: &Path) -> Outcome {
    let config = dir.join("grid.toml");
    std::fs::write(
        &config,
        "[spec]\nnum_nodes = 2\nnum_ops = 8\n\n[search]\nepochs_per_round = 3\n\n\
         [bound]\nbeta = [0.002, 0.005]\ngamma = [0.005, 0.01]\ne_star = 105\n\
         zeta_gap_multiple = 4.0\ngap = \"utility\"\ntrials = 1000\n",
    )
    .unwrap();
    let out = dir.join("grid");
    let started = Instant::now();
    let run = Command::new(BIN)
        .args(["validate-bound", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    let elapsed = started.elapsed();
    let stdout = String::from_utf8_lossy(&run.stdout);
    for line in stdout.lines() {
        println!("      {line}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("validate_bound.json")).unwrap_or_default()).unwrap_or_default();
    let cells = summary["cells"].as_array().cloned().unwrap_or_default();
    let informative: u64 = cells.iter().map(|c| c["informative_rows"].as_u64().unwrap_or(0)).sum();
    let above: u64 = cells
        .iter()
        .map(|c| c["rows_upper_above_bound"].as_u64().unwrap_or(0))
        .sum();
    let code = run.status.code().unwrap_or(-1);
    outcome(
        cells.len() == 4 && above == 0 && code == 0 && elapsed < Duration::from_secs(600),
        format!(
            "{} cells, {informative} informative rows, {above} with Wilson upper limit above the bound, exit {code}, {:.1}s",
            cells.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Sample deviation of the synthetic oracle at three fixed epochs.
fn noise_fidelity() -> Outcome {
    let sp = space(2, 4, 1);
    let noise = NoiseParams {
        beta: 0.002,
        gamma: 0.01,
        e_star: 105,
    };
    let mut landscape = SyntheticLandscape::<f64>::random_separable(
        &sp,
        noise,
        0.1,
        0.9,
        &mut rng::substream(4, label::LANDSCAPE, &[]),
    );
    landscape.clamp_metric = false;
    let arch = Architecture::new(vec![0; sp.num_flat_edges()]);
    let oracle = SyntheticOracle::new(landscape, EpochClock::Search, 4);
    let mut details = Vec::new();
    let mut pass = true;
    for e_t in [1usize, 50, 105] {
        let draws: Vec<f64> = (0..10_000u64)
            .map(|i| oracle.train_epoch(&ctx(e_t, ((e_t as u64) << 32) | i), &arch).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let sd = var.sqrt();
        let sigma = 0.002 * (105 - e_t) as f64 + 0.01;
        let err = rel(sd, sigma);
        pass &= err <= 0.05;
        details.push(format!("e_t={e_t}: sd {sd:.5} vs {sigma:.5} ({:.2}%)", 100.0 * err));
    }
    outcome(pass, details.join("; "))
}

/// Closed-form values and the partial-sum inequality.
fn closed_forms() -> Outcome {
    let p = |zeta: f64, ops: usize, ops_max: usize, beta: f64, gamma: f64, e_star: usize| BoundParams {
        noise: NoiseParams { beta, gamma, e_star },
        zeta,
        ops_count: ops,
        ops_count_max: ops_max,
    };
    let worked = p(2.0, 8, 8, 0.1, 0.05, 100);
    let ratio_sq = (1.05f64 / 2.0) * (1.05 / 2.0);
    let t = theory::total_error_bound(&worked, 90, 8).unwrap();
    let t1 = theory::total_error_bound(&worked, 90, 1).unwrap();
    let checks = [
        // delta: zeta * e^(|O| - |O|*)
        rel(
            theory::delta_threshold(&p(2.0, 6, 8, 0.0, 0.1, 10)),
            2.0 * (-2.0f64).exp(),
        ),
        rel(theory::delta_threshold(&p(1.7, 8, 8, 0.0, 0.1, 10)), 1.7),
        // single round: sigma = 0.2, delta = 2 -> 0.01; sigma = delta -> 1
        rel(
            theory::single_round_bound(&p(2.0, 8, 8, 0.0, 0.2, 10), 3).unwrap(),
            0.01,
        ),
        rel(theory::single_round_bound(&p(2.0, 8, 8, 0.0, 2.0, 10), 4).unwrap(), 1.0),
        // worked example: sigma = 0.1 * 10 + 0.05, delta = 2, K = 8
        rel(theory::sigma(&worked, 90).unwrap(), 1.05),
        rel(t.exact, (2.0 - 1.0 / 8.0) * ratio_sq),
        rel(t.simplified, 2.0 * ratio_sq),
        rel(t.simplified, 0.55125),
        rel(t1.exact, ratio_sq),
    ]
    .map(|e| e <= 1e-12);
    let mut inequalities = true;
    let mut partial = 1.0f64;
    for k in 2..=10_000usize {
        partial += 1.0 / (k * k) as f64;
        let b = theory::total_error_bound(&worked, 90, k).unwrap();
        inequalities &= b.exact < b.simplified;
        inequalities &= partial < 2.0 - 1.0 / k as f64;
        inequalities &= (theory::inverse_square_partial_sum::<f64>(k) - partial).abs() <= 1e-12;
    }
    let passed = checks.iter().filter(|&&c| c).count();
    outcome(
        passed == checks.len() && inequalities,
        format!(
            "{passed}/{} closed-form values, inequalities for K in 2..=10000: {inequalities}",
            checks.len()
        ),
    )
}

/// Distribution invariants across a fuzzed sequence of operations.
fn distribution_invariants() -> Outcome {
    let mut ops = 0usize;
    let mut failures = Vec::new();
    let mut rng = rng::substream(6, "fuzz", &[]);
    let mut run = 0u64;
    while ops < 10_000 {
        run += 1;
        let m = rng.random_range(1..=4);
        let k = rng.random_range(2..=8);
        let sp = space(m, k, rng.random_range(1..=2));
        let mut state = CategoricalState::<f64>::init_uniform(&sp);
        while !state.is_converged() {
            let kk = state.alive_count().unwrap();
            let archs = state.disjoint_sample(&mut rng).unwrap();
            ops += 1;
            for (e, dist) in state.edges.iter().enumerate() {
                let mut seen: Vec<usize> = archs.iter().map(|a| a.ops[e]).collect();
                seen.sort_unstable();
                let mut alive = dist.alive.clone();
                alive.sort_unstable();
                if archs.len() != kk || seen != alive {
                    failures.push(format!("run {run}: disjoint sample not a bijection on edge {e}"));
                }
            }
            let scale = [1e-3, 1.0, 50.0][rng.random_range(0..3)];
            let scores = ScoreTable {
                scores: state
                    .edges
                    .iter()
                    .map(|d| (0..d.k()).map(|_| scale * rng.random::<f64>()).collect())
                    .collect(),
            };
            let temperature = [0.05, 0.5, 1.0][rng.random_range(0..3)];
            let updated = state.update_softmax(&scores, temperature).unwrap();
            ops += 1;
            let shift = rng.random_range(-100.0..100.0);
            let shifted = ScoreTable {
                scores: scores
                    .scores
                    .iter()
                    .map(|r| r.iter().map(|s| s + shift).collect())
                    .collect(),
            };
            let other = state.update_softmax(&shifted, temperature).unwrap();
            ops += 1;
            for (a, b) in updated.edges.iter().zip(&other.edges) {
                if a.probs.iter().zip(&b.probs).any(|(x, y)| (x - y).abs() > 1e-12) {
                    failures.push(format!("run {run}: shift invariance broken"));
                }
            }
            let (pruned, _) = updated.prune_min().unwrap();
            ops += 1;
            for s in [&updated, &pruned] {
                let counts: Vec<usize> = s.edges.iter().map(|d| d.k()).collect();
                for d in &s.edges {
                    let sum: f64 = d.probs.iter().sum();
                    if (sum - 1.0).abs() > NORMALIZATION_TOL || d.probs.iter().any(|&p| p.is_nan() || p <= 0.0) {
                        failures.push(format!("run {run}: probabilities {:?}", d.probs));
                    }
                }
                if counts.iter().any(|&c| c != counts[0]) {
                    failures.push(format!("run {run}: unequal alive counts {counts:?}"));
                }
            }
            state = pruned;
        }
    }
    failures.dedup();
    outcome(
        failures.is_empty(),
        format!(
            "{ops} operations over {run} runs, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn cli_search(dir: &Path, name: &str, extra: &[&str]) -> (i32, std::path::PathBuf) {
    let out = dir.join(name);
    let status = Command::new(BIN)
        .arg("search")
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap()
        .status;
    (status.code().unwrap_or(-1), out)
}

/// Byte-identical logs for equal seeds under one and eight workers.
fn determinism(dir: &Path) -> Outcome {
    let common = [
        "--seed",
        "7",
        "spec.num_nodes=3",
        "spec.num_ops=6",
        "oracle.beta=0.002",
        "oracle.gamma=0.01",
    ];
    let mut logs = Vec::new();
    for (i, jobs) in ["1", "1", "8", "8"].iter().enumerate() {
        let mut args = common.to_vec();
        args.extend(["--jobs", jobs]);
        let (code, out) = cli_search(dir, &format!("det{i}"), &args);
        if code != 0 {
            return outcome(false, format!("search exited {code}"));
        }
        logs.push(std::fs::read(out.join("events.jsonl")).unwrap());
    }
    let same = logs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same && !logs[0].is_empty(),
        format!("4 runs ({} bytes each), identical: {same}", logs[0].len()),
    )
}

/// Retrained accuracy of the searched architecture against the median of
/// 20 random architectures, over 20 seeds.
fn supernet_beats_random() -> Outcome {
    const RETRAIN_EPOCHS: usize = 20;
    let sp = SearchSpaceSpec::build(2, &MicroOp::names(), 1).unwrap();
    let mut wins = 0;
    let mut slowest = Duration::ZERO;
    let mut lines = Vec::new();
    for seed in 0..20u64 {
        let started = Instant::now();
        let cfg = SupernetConfig {
            seed,
            ..Default::default()
        };
        let mut net = MicroSupernet::new(&sp, cfg.clone()).unwrap();
        let search = SearchConfig::<f64> {
            seed,
            ..Default::default()
        };
        let res = run_search(&sp, &mut net, &search).unwrap();
        let searched = MicroSupernet::retrain(&sp, &cfg, &res.final_architecture, RETRAIN_EPOCHS).unwrap();
        let mut r = rng::substream(seed, label::BASELINE, &[]);
        let mut baseline: Vec<f64> = (0..20)
            .map(|_| {
                let a = Architecture::new(
                    (0..sp.num_flat_edges())
                        .map(|_| r.random_range(0..sp.num_ops()))
                        .collect(),
                );
                MicroSupernet::retrain(&sp, &cfg, &a, RETRAIN_EPOCHS).unwrap()
            })
            .collect();
        baseline.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = (baseline[9] + baseline[10]) / 2.0;
        if searched >= median {
            wins += 1;
        }
        slowest = slowest.max(started.elapsed());
        lines.push(format!("{searched:.3}/{median:.3}"));
    }
    println!("      searched/median per seed: {}", lines.join(" "));
    outcome(
        wins >= 16 && slowest < Duration::from_secs(300),
        format!(
            "{wins}/20 seeds at or above the random median, slowest seed {:.1}s",
            slowest.as_secs_f64()
        ),
    )
}

/// Benchmark file, architecture strings and log replay round-trips.
fn round_trips(dir: &Path) -> Outcome {
    let sp = space(2, 3, 1);
    let landscape = SyntheticLandscape::<f64>::random_separable(
        &sp,
        NoiseParams {
            beta: 0.003,
            gamma: 0.02,
            e_star: 20,
        },
        0.1,
        0.9,
        &mut rng::substream(9, label::LANDSCAPE, &[]),
    );
    let bench = generate_benchmark(&sp, &landscape, 5, 9, 1 << 20).unwrap();
    let path = dir.join("bench.txt");
    bench.save(&path).unwrap();
    let loaded = TabularBenchmark::<f64>::load(&path).unwrap();
    let bench_ok = loaded.entries.len() == bench.entries.len()
        && loaded
            .entries
            .iter()
            .zip(&bench.entries)
            .all(|((ka, va), (kb, vb))| ka == kb && va.iter().zip(vb).all(|(a, b)| a.to_bits() == b.to_bits()));

    let big = space(4, 8, 2);
    let mut r = rng::substream(9, "archs", &[]);
    let codec_ok = (0..1000).all(|_| {
        let a = Architecture::new((0..big.num_flat_edges()).map(|_| r.random_range(0..8)).collect());
        big.decode(&big.encode(&a)).unwrap() == a
    });

    let (code, out) = cli_search(
        dir,
        "replay",
        &["--seed", "3", "spec.num_nodes=2", "spec.num_ops=4", "oracle.gamma=0.01"],
    );
    let report = Command::new(BIN)
        .arg("report")
        .arg(out.join("events.jsonl"))
        .output()
        .unwrap();
    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("result.json")).unwrap_or_default()).unwrap_or_default();
    let expected = result["final_architecture"].as_str().unwrap_or("<missing>").to_string();
    let text = String::from_utf8_lossy(&report.stdout);
    let replay_ok =
        code == 0 && report.status.success() && text.lines().any(|l| l == format!("final architecture: {expected}"));
    outcome(
        bench_ok && codec_ok && replay_ok,
        format!("benchmark bit-exact: {bench_ok}; 1000 encode/decode: {codec_ok}; report replay: {replay_ok}"),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Check)> = vec![
        ("1 noiseless recovery", Box::new(noiseless_recovery)),
        ("2 budget identity", Box::new(budget_identity)),
        ("3 bound validation", Box::new(|| bound_validation(dir.path()))),
        ("4 noise-model fidelity", Box::new(noise_fidelity)),
        ("5 closed-form checks", Box::new(closed_forms)),
        ("6 distribution invariants", Box::new(distribution_invariants)),
        ("7 determinism", Box::new(|| determinism(dir.path()))),
        ("8 supernet search vs random", Box::new(supernet_beats_random)),
        ("9 round-trips", Box::new(|| round_trips(dir.path()))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let o = check();
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
