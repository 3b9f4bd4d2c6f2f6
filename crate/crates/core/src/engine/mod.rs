//! The interactive discovery loop.
//!
//! A run starts from an initial prediction (zero-shot confidences for every
//! candidate pair) and then, round by round, selects pairs to experiment on,
//! freezes them at the revealed label and lets the predictor revise their
//! neighbours. See [`Discovery`] for the step-wise driver and
//! [`run_discovery`] / [`run_batch`] for complete runs.

mod discovery;
mod runlog;
mod select;
mod state;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeLabel, GraphError, Pair};
use crate::predictor::PredictorError;

pub use discovery::{
    derive_seed, initialize, initialize_observed, run_batch, run_discovery, BatchResult, ConsistentOracle, Discovery,
    ExperimentOracle, InitialPrediction, TruthOracle,
};
pub use runlog::{GlobalRevision, LogRecord, RoundSummary, RunHeader, RunLog, RunLogError};
pub use select::{
    adjacent_update_targets, select_llm_direct, select_random, select_static, select_uncertain,
    static_ranking, LlmSelection, MAX_PROPOSAL_REPROMPTS,
};
pub use state::{PredictionState, Snapshot};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("experiment oracle failed on {pair}: {message}")]
    Oracle { pair: Pair, message: String },
    #[error("oracle answered {pair} with {first:?} and later {second:?}")]
    OracleInconsistent { pair: Pair, first: EdgeLabel, second: EdgeLabel },
    #[error("selection policy unavailable: {0}")]
    PolicyUnavailable(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("the run is finished")]
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    /// Lowest absolute confidence first.
    Uncertainty,
    /// Uniform without replacement.
    Random,
    /// Fixed order by initial absolute confidence.
    Static,
    /// Ask the predictor which edges to test.
    LlmDirect,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 4] =
        [SelectionPolicy::Uncertainty, SelectionPolicy::Random, SelectionPolicy::Static, SelectionPolicy::LlmDirect];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionPolicy::Uncertainty => "uncertainty",
            SelectionPolicy::Random => "random",
            SelectionPolicy::Static => "static",
            SelectionPolicy::LlmDirect => "llm-direct",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateStrategy {
    /// One predictor call per (experiment, adjacent pair).
    Local,
    /// Experiments are frozen, nothing else changes.
    None,
    /// One predictor call revising the whole prediction.
    Global,
}

impl UpdateStrategy {
    pub const ALL: [UpdateStrategy; 3] = [UpdateStrategy::Local, UpdateStrategy::None, UpdateStrategy::Global];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateStrategy::Local => "local",
            UpdateStrategy::None => "none",
            UpdateStrategy::Global => "global",
        }
    }
}

/// Which pairs count as neighbours of an experimented edge `(i, j)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyScope {
    /// `(i, k)` and `(l, j)` only.
    #[default]
    SharedEndpoint,
    /// Every pair touching `i` or `j`, including `(j, i)`.
    AnyIncident,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub rounds: usize,
    pub per_round: usize,
    pub zero_shot_samples: usize,
    pub update_samples: usize,
    pub policy: SelectionPolicy,
    pub strategy: UpdateStrategy,
    pub seed: u64,
    pub runs: usize,
    pub adjacency: AdjacencyScope,
    /// Largest candidate set the llm-direct policy will render in one prompt.
    pub llm_direct_pair_limit: usize,
    /// Abort instead of degrading when the backend is unreachable.
    pub abort_on_backend_error: bool,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            rounds: 10,
            per_round: 5,
            zero_shot_samples: 16,
            update_samples: 1,
            policy: SelectionPolicy::Uncertainty,
            strategy: UpdateStrategy::Local,
            seed: 0,
            runs: 5,
            adjacency: AdjacencyScope::SharedEndpoint,
            llm_direct_pair_limit: 1000,
            abort_on_backend_error: false,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.rounds < 1 {
            return fail("rounds must be at least 1");
        }
        if self.per_round < 1 {
            return fail("experiments per round must be at least 1");
        }
        if self.zero_shot_samples < 1 {
            return fail("zero-shot sample count must be at least 1");
        }
        if self.update_samples < 1 {
            return fail("update sample count must be at least 1");
        }
        if self.runs < 1 {
            return fail("run count must be at least 1");
        }
        Ok(())
    }

    /// `policy+strategy`, e.g. `uncertainty+local`.
    pub fn method_label(&self) -> String {
        format!("{}+{}", self.policy.as_str(), self.strategy.as_str())
    }

    /// Enough rounds to experiment on every pair of an `n`-node graph.
    pub fn exhaustive_rounds(n: usize, per_round: usize) -> usize {
        crate::graph::candidate_count(n).div_ceil(per_round.max(1))
    }
}
