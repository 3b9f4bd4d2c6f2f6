//! Edge predictors.
//!
//! A [`Predictor`] produces signed confidences for candidate edges: an
//! initial zero-shot assessment per pair, and local revisions of a pair after
//! a neighbouring edge has been experimented on. [`PromptPredictor`] drives a
//! text-completion backend through the prompt templates in `templates/`;
//! [`SimulatedPredictor`] draws calibrated assessments from the ground truth
//! for offline studies.

mod parse;
mod prompt_predictor;
pub mod prompts;
mod scripted;
mod simulated;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeLabel, GraphError, Pair, SignedConfidence, VariableSet, VariableSpec};

pub use parse::{parse_assessment, parse_edge_list, parse_revisions, ParseError, ParseErrorKind};
pub use prompt_predictor::{local_update, zero_shot_assess, PromptPredictor, MAX_PARSE_RETRIES};
pub use scripted::{Script, ScriptError, ScriptedBackend};
pub use simulated::{sim_local_update, sim_zero_shot, OracleParams, SimulatedPredictor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("cannot aggregate an empty sample list")]
    EmptyAggregation,
    #[error("operation not supported by this predictor: {0}")]
    Unsupported(String),
}

impl From<GraphError> for PredictorError {
    fn from(e: GraphError) -> Self {
        PredictorError::Contract(e.to_string())
    }
}

/// Source of sampled text completions for a prompt.
///
/// `sample_index` distinguishes independent samples of the same prompt, so
/// caching layers can replay each one separately.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, sample_index: usize) -> Result<String, BackendError>;

    /// One result per index, in the order given.
    fn complete_many(&self, prompt: &str, indices: &[usize]) -> Vec<Result<String, BackendError>> {
        indices.iter().map(|&i| self.complete(prompt, i)).collect()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, prompt: &str, sample_index: usize) -> Result<String, BackendError> {
        (**self).complete(prompt, sample_index)
    }

    fn complete_many(&self, prompt: &str, indices: &[usize]) -> Vec<Result<String, BackendError>> {
        (**self).complete_many(prompt, indices)
    }
}

/// Adapts a closure into a backend. Handy for tests and fixtures.
pub struct FnBackend<F>(pub F);

impl<F> CompletionBackend for FnBackend<F>
where
    F: Fn(&str, usize) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, prompt: &str, sample_index: usize) -> Result<String, BackendError> {
        (self.0)(prompt, sample_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Yes,
    No,
}

impl Decision {
    pub fn label(self) -> EdgeLabel {
        match self {
            Decision::Yes => EdgeLabel::Present,
            Decision::No => EdgeLabel::Absent,
        }
    }

    pub fn from_label(label: EdgeLabel) -> Self {
        match label {
            EdgeLabel::Present => Decision::Yes,
            EdgeLabel::Absent => Decision::No,
        }
    }
}

/// One parsed predictor sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeAssessment {
    pub decision: Decision,
    /// Always in `1..=100`.
    pub confidence: u8,
    pub raw_text: String,
}

impl EdgeAssessment {
    pub fn signed(&self) -> f64 {
        self.decision.label().sign() * f64::from(self.confidence)
    }
}

/// Signed mean of the samples: `+confidence` for YES, `-confidence` for NO.
pub fn aggregate_samples(samples: &[EdgeAssessment]) -> Result<SignedConfidence, PredictorError> {
    if samples.is_empty() {
        return Err(PredictorError::EmptyAggregation);
    }
    Ok(signed_mean(samples.iter().map(EdgeAssessment::signed)))
}

/// Mean of signed values, summed in sorted order so the result does not
/// depend on the order the values arrived in.
pub(crate) fn signed_mean(values: impl IntoIterator<Item = f64>) -> SignedConfidence {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return SignedConfidence::NEUTRAL;
    }
    v.sort_by(f64::total_cmp);
    SignedConfidence::new(v.iter().sum::<f64>() / v.len() as f64)
}

/// Which endpoint a local-update target shares with the experimented edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    SharesParent,
    SharesChild,
}

/// Inputs of the zero-shot prompt for the pair `parent -> target`.
#[derive(Clone, Copy, Debug)]
pub struct PromptContext<'a> {
    pub variables: &'a VariableSet,
    pub target: &'a VariableSpec,
    pub parent: &'a VariableSpec,
}

impl<'a> PromptContext<'a> {
    pub fn for_pair(variables: &'a VariableSet, pair: Pair) -> Result<Self, PredictorError> {
        variables.check_pair(pair)?;
        Ok(PromptContext {
            variables,
            target: variables.get(pair.child).expect("checked"),
            parent: variables.get(pair.parent).expect("checked"),
        })
    }

    pub fn pair(&self) -> Pair {
        Pair::new(self.parent.id, self.target.id)
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.parent.id == self.target.id {
            return Err(PredictorError::Contract(format!(
                "parent and target are the same variable {:?}",
                self.target.name
            )));
        }
        self.variables.check_pair(self.pair())?;
        Ok(())
    }
}

/// Inputs of a local-update prompt: the experiment just run and one
/// neighbouring edge whose belief should be revised.
#[derive(Clone, Copy, Debug)]
pub struct LocalUpdateContext<'a> {
    pub variables: &'a VariableSet,
    pub experiment: Pair,
    pub revealed: EdgeLabel,
    /// The experimented edge's confidence before the experiment.
    pub experiment_prior: SignedConfidence,
    pub target: Pair,
    pub target_confidence: SignedConfidence,
    pub relation: Relation,
}

impl LocalUpdateContext<'_> {
    pub fn validate(&self) -> Result<(), PredictorError> {
        self.variables.check_pair(self.experiment)?;
        self.variables.check_pair(self.target)?;
        if self.target == self.experiment {
            return Err(PredictorError::Contract("target is the experimented edge".into()));
        }
        if self.target_confidence.is_certain() {
            return Err(PredictorError::Contract(format!(
                "target {} is already certain (experimented or saturated)",
                self.target
            )));
        }
        let shared = match self.relation {
            Relation::SharesParent => self.experiment.parent,
            Relation::SharesChild => self.experiment.child,
        };
        if self.target.parent != shared && self.target.child != shared {
            return Err(PredictorError::Contract(format!(
                "relation {:?} inconsistent with experiment {} and target {}",
                self.relation, self.experiment, self.target
            )));
        }
        Ok(())
    }
}

/// Inputs for asking the predictor directly which edges to test next.
#[derive(Clone, Copy, Debug)]
pub struct ProposalContext<'a> {
    pub variables: &'a VariableSet,
    /// Current labels in candidate-edge order.
    pub labels: &'a [EdgeLabel],
    pub experimented: &'a [bool],
    pub count: usize,
    /// 0 for the first request, incremented on each re-prompt.
    pub attempt: usize,
}

/// Inputs for the single-prompt global revision of the whole prediction.
#[derive(Clone, Copy, Debug)]
pub struct GlobalUpdateContext<'a> {
    pub variables: &'a VariableSet,
    /// Round-start confidences in candidate-edge order, experiments frozen.
    pub confidences: &'a [SignedConfidence],
    pub experimented: &'a [bool],
    pub feedback: &'a [(Pair, EdgeLabel)],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotOutcome {
    pub confidence: SignedConfidence,
    pub samples: Vec<EdgeAssessment>,
    /// Samples that never produced a parseable response.
    pub dropped: usize,
    /// Set when every sample failed and the confidence fell back to neutral.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub confidence: SignedConfidence,
    /// The update produced no usable sample; `confidence` is the prior.
    pub skipped: bool,
}

pub trait Predictor {
    /// Short human-readable identity, recorded in run headers.
    fn describe(&self) -> String;

    fn zero_shot(
        &mut self,
        ctx: &PromptContext<'_>,
        samples: usize,
    ) -> Result<ZeroShotOutcome, PredictorError>;

    fn local_update(
        &mut self,
        ctx: &LocalUpdateContext<'_>,
        samples: usize,
    ) -> Result<UpdateOutcome, PredictorError>;

    /// Raw edge proposals; the caller validates them.
    fn propose_experiments(&mut self, ctx: &ProposalContext<'_>) -> Result<Vec<Pair>, PredictorError>;

    /// Revised confidences for any subset of pairs.
    fn global_update(
        &mut self,
        ctx: &GlobalUpdateContext<'_>,
    ) -> Result<Vec<(Pair, SignedConfidence)>, PredictorError>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn describe(&self) -> String {
        (**self).describe()
    }

    fn zero_shot(
        &mut self,
        ctx: &PromptContext<'_>,
        samples: usize,
    ) -> Result<ZeroShotOutcome, PredictorError> {
        (**self).zero_shot(ctx, samples)
    }

    fn local_update(
        &mut self,
        ctx: &LocalUpdateContext<'_>,
        samples: usize,
    ) -> Result<UpdateOutcome, PredictorError> {
        (**self).local_update(ctx, samples)
    }

    fn propose_experiments(&mut self, ctx: &ProposalContext<'_>) -> Result<Vec<Pair>, PredictorError> {
        (**self).propose_experiments(ctx)
    }

    fn global_update(
        &mut self,
        ctx: &GlobalUpdateContext<'_>,
    ) -> Result<Vec<(Pair, SignedConfidence)>, PredictorError> {
        (**self).global_update(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(decision: Decision, confidence: u8) -> EdgeAssessment {
        EdgeAssessment { decision, confidence, raw_text: String::new() }
    }

    #[test]
    fn aggregate_examples() {
        let mixed = [a(Decision::Yes, 80), a(Decision::No, 60), a(Decision::Yes, 40)];
        let c = aggregate_samples(&mixed).unwrap();
        assert_eq!(c.value(), 20.0);
        assert_eq!(c.label(), EdgeLabel::Present);

        let c = aggregate_samples(&[a(Decision::No, 50)]).unwrap();
        assert_eq!(c.value(), -50.0);
        assert_eq!(c.label(), EdgeLabel::Absent);

        let all = vec![a(Decision::Yes, 100); 16];
        assert_eq!(aggregate_samples(&all).unwrap().value(), 100.0);

        assert_eq!(aggregate_samples(&[]), Err(PredictorError::EmptyAggregation));
    }

    fn arb_assessment() -> impl Strategy<Value = EdgeAssessment> {
        (any::<bool>(), 1u8..=100).prop_map(|(yes, c)| {
            a(if yes { Decision::Yes } else { Decision::No }, c)
        })
    }

    proptest! {
        #[test]
        fn aggregate_is_bounded_and_permutation_invariant(
            samples in proptest::collection::vec(arb_assessment(), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let base = aggregate_samples(&samples).unwrap();
            prop_assert!(base.value().abs() <= 100.0);
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate_samples(&shuffled).unwrap(), base);
        }

        #[test]
        fn singleton_aggregation_is_identity(s in arb_assessment()) {
            prop_assert_eq!(aggregate_samples(std::slice::from_ref(&s)).unwrap().value(), s.signed());
        }
    }
}
