use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{aggregate_curves, f1_curve, Curve, Spread};
use crate::graph::{
    compute_metrics, diff_rounds, EdgeLabel, GroundTruthGraph, LoadedGraph, Pair, SignedConfidence, VariableSet,
};
use crate::predictor::{
    GlobalUpdateContext, LocalUpdateContext, Predictor, PredictorError, PromptContext, UpdateOutcome,
    ZeroShotOutcome,
};

use super::runlog::{GlobalRevision, LogRecord, RoundSummary, RunHeader, RunLog};
use super::select::{
    adjacent_update_targets, select_llm_direct, select_random, select_static, select_uncertain, static_ranking,
};
use super::{DiscoveryConfig, EngineError, PredictionState, SelectionPolicy, UpdateStrategy};

/// Zero-shot confidences for every candidate pair, shared by all methods
/// compared on a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialPrediction {
    pub confidences: Vec<SignedConfidence>,
    #[serde(default)]
    pub flagged: Vec<Pair>,
}

/// Assesses every candidate pair with `samples` zero-shot samples. Pairs
/// whose assessment fails entirely get the neutral confidence and are
/// flagged, unless `abort_on_backend_error` is set and the backend is
/// unreachable.
pub fn initialize<P: Predictor + ?Sized>(
    variables: &VariableSet,
    predictor: &mut P,
    samples: usize,
    abort_on_backend_error: bool,
) -> Result<InitialPrediction, EngineError> {
    initialize_observed(variables, predictor, samples, abort_on_backend_error, |_, _| {})
}

/// [`initialize`], reporting each pair's outcome (or the error that made it
/// fall back to neutral) to `observe` in candidate-edge order.
pub fn initialize_observed<P, F>(
    variables: &VariableSet,
    predictor: &mut P,
    samples: usize,
    abort_on_backend_error: bool,
    mut observe: F,
) -> Result<InitialPrediction, EngineError>
where
    P: Predictor + ?Sized,
    F: FnMut(Pair, Result<&ZeroShotOutcome, &PredictorError>),
{
    let mut confidences = Vec::new();
    let mut flagged = Vec::new();
    for pair in variables.candidate_edges() {
        let ctx = PromptContext::for_pair(variables, pair)?;
        match predictor.zero_shot(&ctx, samples) {
            Ok(out) => {
                observe(pair, Ok(&out));
                if out.flagged {
                    flagged.push(pair);
                }
                confidences.push(out.confidence);
            }
            Err(PredictorError::Backend(e)) if abort_on_backend_error => {
                return Err(PredictorError::Backend(e).into());
            }
            Err(e) => {
                observe(pair, Err(&e));
                tracing::warn!(%pair, error = %e, "zero-shot assessment failed; using neutral confidence");
                flagged.push(pair);
                confidences.push(SignedConfidence::NEUTRAL);
            }
        }
    }
    Ok(InitialPrediction { confidences, flagged })
}

/// Source of experiment outcomes.
pub trait ExperimentOracle {
    fn answer(&mut self, pair: Pair) -> Result<EdgeLabel, EngineError>;
}

/// Answers from a known ground-truth graph.
pub struct TruthOracle<'a>(pub &'a GroundTruthGraph);

impl ExperimentOracle for TruthOracle<'_> {
    fn answer(&mut self, pair: Pair) -> Result<EdgeLabel, EngineError> {
        Ok(self.0.label_of(pair.parent, pair.child)?)
    }
}

impl<F: FnMut(Pair) -> Result<EdgeLabel, EngineError>> ExperimentOracle for F {
    fn answer(&mut self, pair: Pair) -> Result<EdgeLabel, EngineError> {
        self(pair)
    }
}

/// Remembers every answer and rejects an oracle that contradicts itself.
pub struct ConsistentOracle<O> {
    inner: O,
    seen: BTreeMap<Pair, EdgeLabel>,
}

impl<O: ExperimentOracle> ConsistentOracle<O> {
    pub fn new(inner: O) -> Self {
        ConsistentOracle { inner, seen: BTreeMap::new() }
    }
}

impl<O: ExperimentOracle> ExperimentOracle for ConsistentOracle<O> {
    fn answer(&mut self, pair: Pair) -> Result<EdgeLabel, EngineError> {
        let label = self.inner.answer(pair)?;
        match self.seen.insert(pair, label) {
            Some(first) if first != label => {
                Err(EngineError::OracleInconsistent { pair, first, second: label })
            }
            _ => Ok(label),
        }
    }
}

/// Step-wise driver of one discovery run.
///
/// Call [`propose`](Self::propose) to get the round's experiments and
/// [`commit`](Self::commit) with their outcomes; repeat until
/// [`is_finished`](Self::is_finished). The deferred form lets a human answer
/// experiments between the two calls.
pub struct Discovery<P> {
    variables: VariableSet,
    truth: Option<GroundTruthGraph>,
    config: DiscoveryConfig,
    predictor: P,
    state: PredictionState,
    static_order: Vec<Pair>,
    rng: ChaCha8Rng,
    log: RunLog,
    pending: Option<Vec<Pair>>,
}

impl<P: Predictor> Discovery<P> {
    pub fn new(
        graph: &LoadedGraph,
        config: DiscoveryConfig,
        predictor: P,
        initial: InitialPrediction,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let variables = graph.variables.clone();
        let n = variables.len();
        if initial.confidences.len() != crate::graph::candidate_count(n) {
            return Err(EngineError::Config(format!(
                "initial prediction covers {} pairs, graph has {}",
                initial.confidences.len(),
                crate::graph::candidate_count(n)
            )));
        }
        let static_order = static_ranking(n, &initial.confidences);
        let state = PredictionState::new(n, initial.confidences);
        let mut log = RunLog::default();
        log.push(LogRecord::RunHeader(RunHeader {
            graph_hash: graph.hash.clone(),
            method: config.method_label(),
            config: config.clone(),
            seed: config.seed,
            predictor: predictor.describe(),
            variables: variables.iter().map(|v| v.name.clone()).collect(),
            truth_edges: graph.truth.as_ref().map(|t| t.edges().iter().copied().collect()),
            flagged_pairs: initial.flagged,
        }));
        let mut d = Discovery {
            variables,
            truth: graph.truth.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            predictor,
            state,
            static_order,
            log,
            pending: None,
        };
        let summary = d.summarize(&BTreeSet::new())?;
        d.log.push(LogRecord::RoundSummary(summary));
        Ok(d)
    }

    pub fn state(&self) -> &PredictionState {
        &self.state
    }

    pub fn config(&self) -> &DiscoveryConfig {
        &self.config
    }

    pub fn variables(&self) -> &VariableSet {
        &self.variables
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    pub fn predictor_mut(&mut self) -> &mut P {
        &mut self.predictor
    }

    /// The proposal awaiting feedback, if any.
    pub fn pending(&self) -> Option<&[Pair]> {
        self.pending.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.round() >= self.config.rounds || self.state.remaining().is_empty()
    }

    /// Selects this round's experiments. Calling again before
    /// [`commit`](Self::commit) returns the same proposal.
    pub fn propose(&mut self) -> Result<Vec<Pair>, EngineError> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        if self.is_finished() {
            return Err(EngineError::Finished);
        }
        let count = self.config.per_round;
        let mut random_fill = Vec::new();
        let pairs = match self.config.policy {
            SelectionPolicy::Uncertainty => select_uncertain(&self.state, count),
            SelectionPolicy::Random => select_random(&self.state, count, &mut self.rng),
            SelectionPolicy::Static => select_static(&self.static_order, &self.state, count),
            SelectionPolicy::LlmDirect => {
                let sel = select_llm_direct(
                    &self.variables,
                    &self.state,
                    &mut self.predictor,
                    count,
                    &mut self.rng,
                    self.config.llm_direct_pair_limit,
                    self.config.abort_on_backend_error,
                )?;
                random_fill = sel.random_fill;
                sel.pairs
            }
        };
        debug_assert!(!pairs.is_empty());
        self.log.push(LogRecord::RoundSelection {
            round: self.state.round() + 1,
            policy: self.config.policy,
            pairs: pairs.clone(),
            random_fill,
        });
        self.pending = Some(pairs.clone());
        Ok(pairs)
    }

    /// Applies the outcomes of the pending proposal: freezes experimented
    /// pairs, runs the configured update strategy against the round-start
    /// prediction, aggregates the update buffers and records the round.
    pub fn commit(&mut self, results: &[(Pair, EdgeLabel)]) -> Result<RoundSummary, EngineError> {
        let proposed = self.pending.take().ok_or_else(|| EngineError::Protocol("no pending proposal".into()))?;
        let answered: BTreeMap<Pair, EdgeLabel> = results.iter().copied().collect();
        let expected: BTreeSet<Pair> = proposed.iter().copied().collect();
        if answered.len() != results.len() || answered.keys().copied().collect::<BTreeSet<_>>() != expected {
            self.pending = Some(proposed);
            return Err(EngineError::Protocol(
                "feedback must contain exactly one label per proposed pair".into(),
            ));
        }
        let round = self.state.round() + 1;
        let feedback: Vec<(Pair, EdgeLabel)> = proposed.iter().map(|p| (*p, answered[p])).collect();
        let start: Vec<SignedConfidence> = self.state.confidences().to_vec();

        for &(pair, label) in &feedback {
            self.log.push(LogRecord::Experiment { round, pair, label });
            self.state.freeze(pair, label);
        }

        match self.config.strategy {
            UpdateStrategy::None => {}
            UpdateStrategy::Local => self.local_updates(round, &feedback, &start)?,
            UpdateStrategy::Global => self.global_update(round, &feedback)?,
        }

        self.state.finish_round();
        let summary = self.summarize(&expected)?;
        self.log.push(LogRecord::RoundSummary(summary.clone()));
        Ok(summary)
    }

    fn local_updates(
        &mut self,
        round: usize,
        feedback: &[(Pair, EdgeLabel)],
        start: &[SignedConfidence],
    ) -> Result<(), EngineError> {
        let n = self.state.node_count();
        let at = |p: Pair| start[crate::graph::pair_index(n, p)];
        for &(experiment, revealed) in feedback {
            for (target, relation) in adjacent_update_targets(&self.state, experiment, self.config.adjacency) {
                let prior = at(target);
                let ctx = LocalUpdateContext {
                    variables: &self.variables,
                    experiment,
                    revealed,
                    experiment_prior: at(experiment),
                    target,
                    target_confidence: prior,
                    relation,
                };
                let outcome = match self.predictor.local_update(&ctx, self.config.update_samples) {
                    Ok(o) => o,
                    Err(PredictorError::Backend(e)) if self.config.abort_on_backend_error => {
                        return Err(PredictorError::Backend(e).into());
                    }
                    Err(e) => {
                        tracing::warn!(%experiment, %target, error = %e, "local update failed; skipped");
                        UpdateOutcome { confidence: prior, skipped: true }
                    }
                };
                if !outcome.skipped {
                    self.state.push_update(target, outcome.confidence);
                }
                self.log.push(LogRecord::LocalUpdate {
                    round,
                    experiment,
                    target,
                    relation,
                    prior: prior.value(),
                    output: outcome.confidence.value(),
                    skipped: outcome.skipped,
                });
            }
        }
        Ok(())
    }

    fn global_update(&mut self, round: usize, feedback: &[(Pair, EdgeLabel)]) -> Result<(), EngineError> {
        let confidences = self.state.confidences().to_vec();
        let ctx = GlobalUpdateContext {
            variables: &self.variables,
            confidences: &confidences,
            experimented: self.state.experimented(),
            feedback,
        };
        let (revisions, skipped) = match self.predictor.global_update(&ctx) {
            Ok(r) => (r, false),
            Err(PredictorError::Backend(e)) if self.config.abort_on_backend_error => {
                return Err(PredictorError::Backend(e).into());
            }
            Err(e) => {
                tracing::warn!(error = %e, "global update failed; prediction unchanged");
                (Vec::new(), true)
            }
        };
        let mut applied = Vec::new();
        let mut seen = BTreeSet::new();
        for (pair, value) in revisions {
            if self.variables.check_pair(pair).is_err() || self.state.is_experimented(pair) || !seen.insert(pair) {
                continue;
            }
            let prior = self.state.confidence(pair);
            self.state.push_update(pair, value);
            applied.push(GlobalRevision { pair, prior: prior.value(), output: value.value() });
        }
        self.log.push(LogRecord::GlobalUpdate { round, revisions: applied, skipped });
        Ok(())
    }

    fn summarize(&self, experimented_this_round: &BTreeSet<Pair>) -> Result<RoundSummary, EngineError> {
        let snapshots = self.state.snapshots();
        let current = snapshots.last().expect("initial snapshot");
        let (metrics, improvements) = match &self.truth {
            Some(truth) => {
                let labels = self.state.label_map();
                let metrics = compute_metrics(&labels, truth)?;
                let improvements = if snapshots.len() >= 2 {
                    let prev = &snapshots[snapshots.len() - 2];
                    let prev_labels: BTreeMap<Pair, EdgeLabel> =
                        self.state.edges().iter().copied().zip(prev.labels()).collect();
                    Some(diff_rounds(&prev_labels, &labels, truth, experimented_this_round)?)
                } else {
                    None
                };
                (Some(metrics), improvements)
            }
            None => (None, None),
        };
        Ok(RoundSummary {
            round: current.round,
            experimented: self.state.experimented_count(),
            metrics,
            improvements,
            confidences: current.confidences.iter().map(|c| c.value()).collect(),
        })
    }
}

/// Runs one complete discovery: initializes (unless `initial` is given) and
/// loops select, experiment, update until the round budget or the candidate
/// set is exhausted.
pub fn run_discovery<P: Predictor, O: ExperimentOracle + ?Sized>(
    graph: &LoadedGraph,
    config: &DiscoveryConfig,
    mut predictor: P,
    oracle: &mut O,
    initial: Option<&InitialPrediction>,
) -> Result<RunLog, EngineError> {
    config.validate()?;
    let initial = match initial {
        Some(i) => i.clone(),
        None => initialize(
            &graph.variables,
            &mut predictor,
            config.zero_shot_samples,
            config.abort_on_backend_error,
        )?,
    };
    let mut d = Discovery::new(graph, config.clone(), predictor, initial)?;
    while !d.is_finished() {
        let selection = d.propose()?;
        let mut results = Vec::with_capacity(selection.len());
        for pair in selection {
            results.push((pair, oracle.answer(pair)?));
        }
        d.commit(&results)?;
    }
    Ok(d.into_log())
}

/// Seed of run `run` in a batch rooted at `base`.
pub fn derive_seed(base: u64, run: usize) -> u64 {
    let mut z = base ^ (run as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug)]
pub struct BatchResult {
    pub logs: Vec<RunLog>,
    /// `(run index, error)` for runs that aborted.
    pub failures: Vec<(usize, String)>,
    /// Mean F1 curve over completed runs; `None` without ground truth or
    /// when every run failed.
    pub curve: Option<Curve>,
}

/// Runs `config.runs` independent discoveries with derived seeds. The
/// factory builds a fresh predictor for each `(run index, seed)`. All runs
/// share one consistency-checked oracle.
pub fn run_batch<P, F, O>(
    graph: &LoadedGraph,
    config: &DiscoveryConfig,
    initial: Option<&InitialPrediction>,
    mut factory: F,
    oracle: O,
) -> Result<BatchResult, EngineError>
where
    P: Predictor,
    F: FnMut(usize, u64) -> Result<P, EngineError>,
    O: ExperimentOracle,
{
    config.validate()?;
    let mut oracle = ConsistentOracle::new(oracle);
    let mut logs = Vec::new();
    let mut failures = Vec::new();
    for run in 0..config.runs {
        let seed = derive_seed(config.seed, run);
        let run_config = DiscoveryConfig { seed, ..config.clone() };
        let outcome = factory(run, seed)
            .and_then(|p| run_discovery(graph, &run_config, p, &mut oracle, initial));
        match outcome {
            Ok(log) => logs.push(log),
            Err(e @ EngineError::OracleInconsistent { .. }) => return Err(e),
            Err(e) => {
                tracing::warn!(run, error = %e, "run aborted; aggregating the remaining runs");
                failures.push((run, e.to_string()));
            }
        }
    }
    let curve = if graph.truth.is_some() && !logs.is_empty() {
        let curves = logs.iter().map(f1_curve).collect::<Result<Vec<_>, _>>().map_err(|e| EngineError::Protocol(e.to_string()))?;
        Some(aggregate_curves(&curves, Spread::StdDev).map_err(|e| EngineError::Protocol(e.to_string()))?)
    } else {
        None
    };
    Ok(BatchResult { logs, failures, curve })
}
