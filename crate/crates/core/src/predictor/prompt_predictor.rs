use crate::graph::{Pair, SignedConfidence};

use super::prompts::{render_global_prompt, render_selection_prompt, render_update_prompt, render_zero_shot_prompt};
use super::{
    parse_assessment, parse_edge_list, parse_revisions, signed_mean, BackendError, CompletionBackend,
    EdgeAssessment, GlobalUpdateContext, LocalUpdateContext, Predictor, PredictorError, PromptContext,
    ProposalContext, UpdateOutcome, ZeroShotOutcome,
};

/// Fresh re-samples per slot after an unusable response, before the slot is dropped.
pub const MAX_PARSE_RETRIES: usize = 3;

struct SampleRound {
    assessments: Vec<EdgeAssessment>,
    dropped: usize,
    last_transport: Option<BackendError>,
    any_text: bool,
}

/// Samples `count` completions. A slot whose response fails to parse (or
/// fails in transport) is re-sampled up to [`MAX_PARSE_RETRIES`] times under
/// a fresh sample index `slot + count * attempt`, then dropped.
fn sample_assessments<B: CompletionBackend + ?Sized>(
    backend: &B,
    prompt: &str,
    count: usize,
) -> SampleRound {
    let mut slots: Vec<Option<EdgeAssessment>> = vec![None; count];
    let mut open: Vec<usize> = (0..count).collect();
    let mut last_transport = None;
    let mut any_text = false;
    for attempt in 0..=MAX_PARSE_RETRIES {
        if open.is_empty() {
            break;
        }
        let indices: Vec<usize> = open.iter().map(|slot| slot + count * attempt).collect();
        let responses = backend.complete_many(prompt, &indices);
        let mut still_open = Vec::new();
        for (slot, response) in open.into_iter().zip(responses) {
            match response {
                Ok(text) => {
                    any_text = true;
                    match parse_assessment(&text) {
                        Ok(a) => slots[slot] = Some(a),
                        Err(e) => {
                            tracing::debug!(slot, attempt, error = %e, "unparseable sample");
                            still_open.push(slot);
                        }
                    }
                }
                Err(BackendError::Config(msg)) => {
                    // Not retryable: every further request would fail the same way.
                    return SampleRound {
                        assessments: Vec::new(),
                        dropped: count,
                        last_transport: Some(BackendError::Config(msg)),
                        any_text: false,
                    };
                }
                Err(e) => {
                    last_transport = Some(e);
                    still_open.push(slot);
                }
            }
        }
        open = still_open;
    }
    let dropped = open.len();
    SampleRound { assessments: slots.into_iter().flatten().collect(), dropped, last_transport, any_text }
}

/// Samples the zero-shot prompt `samples` times and aggregates the parsed
/// answers. If every sample is unusable the pair gets the neutral confidence
/// and is flagged; if no sample ever reached the model, the transport error
/// is returned.
pub fn zero_shot_assess<B: CompletionBackend + ?Sized>(
    backend: &B,
    ctx: &PromptContext<'_>,
    samples: usize,
) -> Result<ZeroShotOutcome, PredictorError> {
    if samples == 0 {
        return Err(PredictorError::Contract("sample count must be at least 1".into()));
    }
    let prompt = render_zero_shot_prompt(ctx)?;
    let round = sample_assessments(backend, &prompt, samples);
    if round.assessments.is_empty() {
        if let (false, Some(e)) = (round.any_text, round.last_transport) {
            return Err(e.into());
        }
        tracing::warn!(pair = %ctx.pair(), "all zero-shot samples unusable; using neutral confidence");
        return Ok(ZeroShotOutcome {
            confidence: SignedConfidence::NEUTRAL,
            samples: Vec::new(),
            dropped: round.dropped,
            flagged: true,
        });
    }
    Ok(ZeroShotOutcome {
        confidence: signed_mean(round.assessments.iter().map(EdgeAssessment::signed)),
        samples: round.assessments,
        dropped: round.dropped,
        flagged: false,
    })
}

/// Renders the relation-specific update prompt and aggregates `samples`
/// answers. With no usable answer the target keeps its prior confidence.
pub fn local_update<B: CompletionBackend + ?Sized>(
    backend: &B,
    ctx: &LocalUpdateContext<'_>,
    samples: usize,
) -> Result<UpdateOutcome, PredictorError> {
    if samples == 0 {
        return Err(PredictorError::Contract("sample count must be at least 1".into()));
    }
    let prompt = render_update_prompt(ctx)?;
    let round = sample_assessments(backend, &prompt, samples);
    if round.assessments.is_empty() {
        if let (false, Some(e)) = (round.any_text, round.last_transport) {
            return Err(e.into());
        }
        tracing::warn!(target = %ctx.target, experiment = %ctx.experiment, "local update skipped");
        return Ok(UpdateOutcome { confidence: ctx.target_confidence, skipped: true });
    }
    Ok(UpdateOutcome {
        confidence: signed_mean(round.assessments.iter().map(EdgeAssessment::signed)),
        skipped: false,
    })
}

/// Predictor backed by a text-completion backend and the prompt templates.
pub struct PromptPredictor<B> {
    backend: B,
    name: String,
}

impl<B: CompletionBackend> PromptPredictor<B> {
    pub fn new(backend: B, name: impl Into<String>) -> Self {
        PromptPredictor { backend, name: name.into() }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }
}

impl<B: CompletionBackend> Predictor for PromptPredictor<B> {
    fn describe(&self) -> String {
        self.name.clone()
    }

    fn zero_shot(
        &mut self,
        ctx: &PromptContext<'_>,
        samples: usize,
    ) -> Result<ZeroShotOutcome, PredictorError> {
        zero_shot_assess(&self.backend, ctx, samples)
    }

    fn local_update(
        &mut self,
        ctx: &LocalUpdateContext<'_>,
        samples: usize,
    ) -> Result<UpdateOutcome, PredictorError> {
        local_update(&self.backend, ctx, samples)
    }

    fn propose_experiments(&mut self, ctx: &ProposalContext<'_>) -> Result<Vec<Pair>, PredictorError> {
        let prompt = render_selection_prompt(ctx)?;
        let text = self.backend.complete(&prompt, ctx.attempt)?;
        Ok(parse_edge_list(&text, ctx.variables)?)
    }

    fn global_update(
        &mut self,
        ctx: &GlobalUpdateContext<'_>,
    ) -> Result<Vec<(Pair, SignedConfidence)>, PredictorError> {
        let prompt = render_global_prompt(ctx)?;
        let text = self.backend.complete(&prompt, 0)?;
        Ok(parse_revisions(&text, ctx.variables)?)
    }
}
