//! Event-log replay: summary, probability trajectories and prune timeline.

use crate::engine::Event;
use anyhow::bail;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbRow {
    pub round: usize,
    pub edge: String,
    pub op: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogReport {
    pub k_per_round: Vec<usize>,
    pub epoch_records: usize,
    pub probabilities: Vec<ProbRow>,
    pub prunes: Vec<ProbRow>,
    /// Architecture named by the `final` event.
    pub logged_final: String,
    /// Architecture rebuilt from update and prune events.
    pub replayed_final: String,
    /// Largest `|sum(probs) - 1|` over all update events.
    pub max_normalization_error: f64,
}

#[derive(Debug)]
pub enum ReportError {
    /// The log stops or breaks after line `last_valid` (0 when no line parsed).
    Truncated {
        last_valid: usize,
        reason: String,
    },
    Inconsistent(String),
}

impl std::fmt::Display for ReportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportError::Truncated { last_valid, reason } => {
                write!(f, "truncated event log: last valid line {last_valid} ({reason})")
            }
            ReportError::Inconsistent(m) => write!(f, "inconsistent event log: {m}"),
        }
    }
}

impl std::error::Error for ReportError {}

pub fn replay<R: BufRead>(input: R) -> Result<LogReport, ReportError> {
    let mut report = LogReport::default();
    // edge -> alive ops, in first-seen edge order
    let mut alive: Vec<(String, Vec<String>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut last_valid = 0;
    let mut final_seen = false;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ReportError::Truncated {
            last_valid,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if final_seen {
            return Err(ReportError::Inconsistent(format!(
                "line {} follows the final event",
                i + 1
            )));
        }
        let event: Event<f64> = serde_json::from_str(&line).map_err(|e| ReportError::Truncated {
            last_valid,
            reason: format!("line {}: {e}", i + 1),
        })?;
        last_valid = i + 1;
        match event {
            Event::RoundStart { k, .. } => report.k_per_round.push(k),
            Event::Epoch { .. } => report.epoch_records += 1,
            Event::Update {
                round,
                edge,
                ops,
                probs,
            } => {
                let sum: f64 = probs.iter().sum();
                report.max_normalization_error = report.max_normalization_error.max((sum - 1.0).abs());
                let slot = *index.entry(edge.clone()).or_insert_with(|| {
                    alive.push((edge.clone(), ops.clone()));
                    alive.len() - 1
                });
                if alive[slot].1 != ops {
                    return Err(ReportError::Inconsistent(format!(
                        "round {round} edge {edge}: update lists {ops:?}, replay has {:?}",
                        alive[slot].1
                    )));
                }
                for (op, prob) in ops.into_iter().zip(probs) {
                    report.probabilities.push(ProbRow {
                        round,
                        edge: edge.clone(),
                        op,
                        prob,
                    });
                }
            }
            Event::Prune { round, edge, op, prob } => {
                let slot = *index
                    .get(&edge)
                    .ok_or_else(|| ReportError::Inconsistent(format!("prune on unseen edge {edge}")))?;
                let ops = &mut alive[slot].1;
                let pos = ops
                    .iter()
                    .position(|o| *o == op)
                    .ok_or_else(|| ReportError::Inconsistent(format!("round {round}: {op} not alive on {edge}")))?;
                ops.remove(pos);
                report.prunes.push(ProbRow { round, edge, op, prob });
            }
            Event::Final { arch } => {
                report.logged_final = arch;
                final_seen = true;
            }
            Event::Sample { .. } | Event::Scores { .. } => {}
        }
    }
    if !final_seen {
        return Err(ReportError::Truncated {
            last_valid,
            reason: "no final event".into(),
        });
    }
    let mut segments = Vec::with_capacity(alive.len());
    for (edge, ops) in &alive {
        if ops.len() != 1 {
            return Err(ReportError::Inconsistent(format!(
                "{edge} ends with {} alive operations",
                ops.len()
            )));
        }
        segments.push(format!("{edge}={}", ops[0]));
    }
    report.replayed_final = segments.join(";");
    if report.k_per_round.is_empty() {
        // A space with a single operation never prunes; the final event is authoritative.
        report.replayed_final = report.logged_final.clone();
    }
    if report.replayed_final != report.logged_final {
        return Err(ReportError::Inconsistent(format!(
            "replayed {} but the log ends with {}",
            report.replayed_final, report.logged_final
        )));
    }
    Ok(report)
}

impl LogReport {
    pub fn probabilities_csv(&self) -> String {
        rows_csv("round,edge,op,prob", &self.probabilities)
    }

    pub fn prunes_csv(&self) -> String {
        rows_csv("round,edge,op,prob", &self.prunes)
    }

    pub fn summary(&self) -> anyhow::Result<String> {
        let mut s = String::new();
        writeln!(s, "rounds: {}", self.k_per_round.len())?;
        let ks: Vec<String> = self.k_per_round.iter().map(|k| k.to_string()).collect();
        writeln!(s, "K per round: {}", ks.join(" "))?;
        writeln!(s, "trained architecture-epochs: {}", self.epoch_records)?;
        writeln!(s, "prune events: {}", self.prunes.len())?;
        writeln!(
            s,
            "max probability normalization error: {:e}",
            self.max_normalization_error
        )?;
        writeln!(s, "final architecture: {}", self.logged_final)?;
        writeln!(s, "replay: ok")?;
        Ok(s)
    }
}

fn rows_csv(header: &str, rows: &[ProbRow]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        // edge keys contain commas
        let _ = writeln!(out, "{},\"{}\",{},{}", r.round, r.edge, r.op, r.prob);
    }
    out
}

/// Fails when a probability trajectory row set does not sum to one.
pub fn check_normalized(report: &LogReport, tol: f64) -> anyhow::Result<()> {
    if report.max_normalization_error > tol {
        bail!(
            "update probabilities deviate from 1 by {:e}",
            report.max_normalization_error
        );
    }
    Ok(())
}
