//! Append-only JSONL record of a discovery run.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{candidate_edges, EdgeLabel, GraphMetrics, ImprovementBreakdown, Pair};
use crate::predictor::Relation;

use super::{DiscoveryConfig, SelectionPolicy};

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("run log has no header")]
    MissingHeader,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub graph_hash: String,
    pub method: String,
    pub config: DiscoveryConfig,
    pub seed: u64,
    pub predictor: String,
    pub variables: Vec<String>,
    /// Ground-truth edges when known; needed to recompute metrics offline.
    pub truth_edges: Option<Vec<Pair>>,
    /// Pairs whose zero-shot assessment fell back to neutral.
    pub flagged_pairs: Vec<Pair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalRevision {
    pub pair: Pair,
    pub prior: f64,
    pub output: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    /// Pairs experimented so far, cumulative.
    pub experimented: usize,
    pub metrics: Option<GraphMetrics>,
    pub improvements: Option<ImprovementBreakdown>,
    /// End-of-round confidences in candidate-edge order.
    pub confidences: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    RunHeader(RunHeader),
    RoundSelection {
        round: usize,
        policy: SelectionPolicy,
        pairs: Vec<Pair>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        random_fill: Vec<Pair>,
    },
    Experiment {
        round: usize,
        pair: Pair,
        label: EdgeLabel,
    },
    LocalUpdate {
        round: usize,
        experiment: Pair,
        target: Pair,
        relation: Relation,
        prior: f64,
        output: f64,
        skipped: bool,
    },
    GlobalUpdate {
        round: usize,
        revisions: Vec<GlobalRevision>,
        skipped: bool,
    },
    RoundSummary(RoundSummary),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn header(&self) -> Option<&RunHeader> {
        self.records.iter().find_map(|r| match r {
            LogRecord::RunHeader(h) => Some(h),
            _ => None,
        })
    }

    pub fn summaries(&self) -> impl Iterator<Item = &RoundSummary> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::RoundSummary(s) => Some(s),
            _ => None,
        })
    }

    pub fn selections(&self) -> impl Iterator<Item = (usize, &[Pair])> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::RoundSelection { round, pairs, .. } => Some((*round, pairs.as_slice())),
            _ => None,
        })
    }

    pub fn experiments(&self) -> impl Iterator<Item = (usize, Pair, EdgeLabel)> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Experiment { round, pair, label } => Some((*round, *pair, *label)),
            _ => None,
        })
    }

    pub fn local_updates(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(|r| matches!(r, LogRecord::LocalUpdate { .. }))
    }

    /// All records except the header.
    pub fn body(&self) -> Vec<&LogRecord> {
        self.records.iter().filter(|r| !matches!(r, LogRecord::RunHeader(_))).collect()
    }

    pub fn candidate_edges(&self) -> Result<Vec<Pair>, RunLogError> {
        let h = self.header().ok_or(RunLogError::MissingHeader)?;
        candidate_edges(h.variables.len()).map_err(|e| RunLogError::Malformed { line: 1, message: e.to_string() })
    }

    /// Whether the log ran its configured rounds or exhausted every pair.
    pub fn is_complete(&self) -> bool {
        let Some(h) = self.header() else { return false };
        let Some(last) = self.summaries().last() else { return false };
        let n = h.variables.len();
        last.round >= h.config.rounds || last.experimented >= n * n.saturating_sub(1)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn write_file(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    /// Parses JSONL. A final line that fails to parse and lacks a trailing
    /// newline is treated as an interrupted write and dropped.
    pub fn from_jsonl(text: &str) -> Result<Self, RunLogError> {
        let lines: Vec<&str> = text.lines().collect();
        let mut log = RunLog::default();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => log.records.push(r),
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {
                    tracing::warn!(line = i + 1, "dropping truncated final run-log line");
                }
                Err(e) => return Err(RunLogError::Malformed { line: i + 1, message: e.to_string() }),
            }
        }
        if log.header().is_none() {
            return Err(RunLogError::MissingHeader);
        }
        Ok(log)
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self, RunLogError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_jsonl(&text)
    }

    pub fn read_file(path: &Path) -> Result<Self, RunLogError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}
