//! Calibrated simulated predictor.
//!
//! Stands in for a language model when studying selection and update policies
//! offline. It reads the ground truth and answers correctly with a fixed
//! probability; correct answers carry higher verbalized confidence.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeLabel, GroundTruthGraph, Pair, SignedConfidence};

use super::{
    signed_mean, Decision, EdgeAssessment, GlobalUpdateContext, LocalUpdateContext, Predictor,
    PredictorError, PromptContext, ProposalContext, UpdateOutcome, ZeroShotOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleParams {
    /// Probability that a sampled decision matches the truth.
    pub zero_shot_accuracy: f64,
    /// Excess of mean confidence on correct samples over incorrect ones.
    pub calibration_gap: f64,
    /// Probability that a local update moves toward the truth.
    pub update_fidelity: f64,
    /// Inclusive range of local-update step sizes.
    pub update_step: (u8, u8),
    pub seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            zero_shot_accuracy: 0.7,
            calibration_gap: 30.0,
            update_fidelity: 0.8,
            update_step: (10, 50),
            seed: 0,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: String| Err(PredictorError::Contract(m));
        if !(0.0..=1.0).contains(&self.zero_shot_accuracy) {
            return bad(format!("zero_shot_accuracy {} outside [0, 1]", self.zero_shot_accuracy));
        }
        if !(0.0..=99.0).contains(&self.calibration_gap) {
            return bad(format!("calibration_gap {} outside [0, 99]", self.calibration_gap));
        }
        if !(0.0..=1.0).contains(&self.update_fidelity) {
            return bad(format!("update_fidelity {} outside [0, 1]", self.update_fidelity));
        }
        let (lo, hi) = self.update_step;
        if lo < 1 || hi > 100 || lo > hi {
            return bad(format!("update_step [{lo}, {hi}] must satisfy 1 <= lo <= hi <= 100"));
        }
        Ok(())
    }

    fn gap(&self) -> u32 {
        self.calibration_gap.round() as u32
    }
}

/// Draws one zero-shot sample for an edge whose true label is `truth`.
///
/// The decision is correct with probability `zero_shot_accuracy`. The
/// confidence is `base` for incorrect decisions and `base + gap` for correct
/// ones, with `base` uniform on `1..=100 - gap`, so the mean confidence of
/// correct samples exceeds that of incorrect samples by exactly `gap`.
pub fn sim_zero_shot<R: Rng + ?Sized>(
    params: &OracleParams,
    rng: &mut R,
    truth: EdgeLabel,
) -> EdgeAssessment {
    let correct = rng.gen_bool(params.zero_shot_accuracy);
    let gap = params.gap();
    let base = rng.gen_range(1..=100 - gap);
    let confidence = if correct { base + gap } else { base } as u8;
    let label = if correct { truth } else { EdgeLabel::from_bool(!truth.is_present()) };
    let decision = Decision::from_label(label);
    let word = match decision {
        Decision::Yes => "YES",
        Decision::No => "NO",
    };
    EdgeAssessment {
        decision,
        confidence,
        raw_text: format!("<decision>{word}</decision><confidence>{confidence}</confidence>"),
    }
}

/// Moves `prior` toward the pole of `truth` with probability
/// `update_fidelity`, otherwise away from it, by a step drawn uniformly from
/// `update_step`. The result is clamped to `[-100, 100]`.
pub fn sim_local_update<R: Rng + ?Sized>(
    params: &OracleParams,
    rng: &mut R,
    truth: EdgeLabel,
    prior: SignedConfidence,
) -> SignedConfidence {
    let toward = rng.gen_bool(params.update_fidelity);
    let (lo, hi) = params.update_step;
    let step = f64::from(rng.gen_range(lo..=hi));
    let direction = if toward { truth.sign() } else { -truth.sign() };
    SignedConfidence::new(prior.value() + direction * step)
}

/// Predictor that answers from the ground truth through [`sim_zero_shot`]
/// and [`sim_local_update`]. All draws come from one seeded stream, consumed
/// in call order.
pub struct SimulatedPredictor {
    params: OracleParams,
    edges: BTreeSet<Pair>,
    rng: ChaCha8Rng,
}

impl SimulatedPredictor {
    pub fn new(params: OracleParams, truth: &GroundTruthGraph) -> Result<Self, PredictorError> {
        params.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        Ok(SimulatedPredictor { params, edges: truth.edges().clone(), rng })
    }

    fn truth(&self, pair: Pair) -> EdgeLabel {
        EdgeLabel::from_bool(self.edges.contains(&pair))
    }
}

impl Predictor for SimulatedPredictor {
    fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "simulated(a={}, g={}, u={}, step={}..={}, seed={})",
            p.zero_shot_accuracy, p.calibration_gap, p.update_fidelity, p.update_step.0, p.update_step.1, p.seed
        )
    }

    fn zero_shot(
        &mut self,
        ctx: &PromptContext<'_>,
        samples: usize,
    ) -> Result<ZeroShotOutcome, PredictorError> {
        ctx.validate()?;
        if samples == 0 {
            return Err(PredictorError::Contract("sample count must be at least 1".into()));
        }
        let truth = self.truth(ctx.pair());
        let drawn: Vec<EdgeAssessment> =
            (0..samples).map(|_| sim_zero_shot(&self.params, &mut self.rng, truth)).collect();
        Ok(ZeroShotOutcome {
            confidence: signed_mean(drawn.iter().map(EdgeAssessment::signed)),
            samples: drawn,
            dropped: 0,
            flagged: false,
        })
    }

    fn local_update(
        &mut self,
        ctx: &LocalUpdateContext<'_>,
        samples: usize,
    ) -> Result<UpdateOutcome, PredictorError> {
        ctx.validate()?;
        if samples == 0 {
            return Err(PredictorError::Contract("sample count must be at least 1".into()));
        }
        let truth = self.truth(ctx.target);
        let outputs: Vec<f64> = (0..samples)
            .map(|_| sim_local_update(&self.params, &mut self.rng, truth, ctx.target_confidence).value())
            .collect();
        Ok(UpdateOutcome { confidence: signed_mean(outputs), skipped: false })
    }

    fn propose_experiments(&mut self, _ctx: &ProposalContext<'_>) -> Result<Vec<Pair>, PredictorError> {
        Err(PredictorError::Unsupported("the simulated predictor cannot propose experiments".into()))
    }

    /// Revises every open pair that shares a node with a fed-back edge once.
    fn global_update(
        &mut self,
        ctx: &GlobalUpdateContext<'_>,
    ) -> Result<Vec<(Pair, SignedConfidence)>, PredictorError> {
        let mut out = Vec::new();
        for (idx, pair) in ctx.variables.candidate_edges().into_iter().enumerate() {
            let prior = ctx.confidences[idx];
            if ctx.experimented[idx] || prior.is_certain() {
                continue;
            }
            if ctx.feedback.iter().any(|(p, _)| p.shares_node(pair)) {
                let truth = self.truth(pair);
                out.push((pair, sim_local_update(&self.params, &mut self.rng, truth, prior)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn params(a: f64, g: f64, u: f64, step: (u8, u8)) -> OracleParams {
        OracleParams { zero_shot_accuracy: a, calibration_gap: g, update_fidelity: u, update_step: step, seed: 0 }
    }

    #[test]
    fn perfect_accuracy_always_matches() {
        let p = params(1.0, 20.0, 0.5, (1, 10));
        let mut r = rng();
        for truth in [EdgeLabel::Present, EdgeLabel::Absent] {
            for _ in 0..500 {
                let s = sim_zero_shot(&p, &mut r, truth);
                assert_eq!(s.decision.label(), truth);
                assert!((21..=100).contains(&s.confidence));
            }
        }
    }

    #[test]
    fn coin_flip_regime_is_uninformative() {
        let p = params(0.5, 0.0, 0.5, (1, 10));
        let mut r = rng();
        let n = 20_000;
        let (mut correct, mut sum_c, mut sum_i, mut nc) = (0usize, 0.0, 0.0, 0usize);
        for _ in 0..n {
            let s = sim_zero_shot(&p, &mut r, EdgeLabel::Present);
            if s.decision == Decision::Yes {
                correct += 1;
                sum_c += f64::from(s.confidence);
                nc += 1;
            } else {
                sum_i += f64::from(s.confidence);
            }
        }
        let frac = correct as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        let gap = sum_c / nc as f64 - sum_i / (n - nc) as f64;
        assert!(gap.abs() < 1.5, "{gap}");
    }

    #[test]
    fn forced_update_arithmetic() {
        let toward = params(0.7, 0.0, 1.0, (50, 50));
        let away = params(0.7, 0.0, 0.0, (50, 50));
        let mut r = rng();
        let prior = SignedConfidence::new(-20.0);
        assert_eq!(sim_local_update(&toward, &mut r, EdgeLabel::Present, prior).value(), 30.0);
        assert_eq!(sim_local_update(&away, &mut r, EdgeLabel::Present, prior).value(), -70.0);
        let high = SignedConfidence::new(90.0);
        assert_eq!(sim_local_update(&toward, &mut r, EdgeLabel::Present, high).value(), 100.0);
    }

    #[test]
    fn seeded_streams_reproduce() {
        let p = params(0.7, 30.0, 0.8, (5, 40));
        let draw = || {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            (0..200)
                .map(|i| {
                    let t = EdgeLabel::from_bool(i % 3 == 0);
                    let s = sim_zero_shot(&p, &mut r, t);
                    let u = sim_local_update(&p, &mut r, t, SignedConfidence::new(s.signed()));
                    (s.signed().to_bits(), u.value().to_bits())
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn param_validation() {
        assert!(params(1.2, 0.0, 0.5, (1, 2)).validate().is_err());
        assert!(params(0.5, 120.0, 0.5, (1, 2)).validate().is_err());
        assert!(params(0.5, 0.0, -0.1, (1, 2)).validate().is_err());
        assert!(params(0.5, 0.0, 0.5, (0, 2)).validate().is_err());
        assert!(params(0.5, 0.0, 0.5, (9, 2)).validate().is_err());
        assert!(OracleParams::default().validate().is_ok());
    }
}
