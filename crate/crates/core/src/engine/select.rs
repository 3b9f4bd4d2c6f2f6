//! Experiment selection policies and update-target enumeration.

use std::collections::BTreeSet;

use rand::Rng;

use crate::graph::{candidate_edges, Pair, SignedConfidence, VariableSet};
use crate::predictor::{Predictor, PredictorError, ProposalContext, Relation};

use super::{AdjacencyScope, EngineError, PredictionState};

/// Re-prompts after the first llm-direct proposal before falling back to
/// random fill.
pub const MAX_PROPOSAL_REPROMPTS: usize = 3;

fn by_magnitude(a: &(Pair, SignedConfidence), b: &(Pair, SignedConfidence)) -> std::cmp::Ordering {
    a.1.magnitude().total_cmp(&b.1.magnitude()).then(a.0.cmp(&b.0))
}

/// The `count` unexperimented pairs with the smallest absolute confidence,
/// ties broken by `(parent, child)`.
pub fn select_uncertain(state: &PredictionState, count: usize) -> Vec<Pair> {
    let mut open: Vec<(Pair, SignedConfidence)> =
        state.remaining().into_iter().map(|p| (p, state.confidence(p))).collect();
    open.sort_by(by_magnitude);
    open.into_iter().take(count).map(|(p, _)| p).collect()
}

/// Uniform sample without replacement from the unexperimented pairs,
/// returned in candidate order.
pub fn select_random<R: Rng + ?Sized>(state: &PredictionState, count: usize, rng: &mut R) -> Vec<Pair> {
    let open = state.remaining();
    let k = count.min(open.len());
    let mut picked: Vec<Pair> = rand::seq::index::sample(rng, open.len(), k).into_iter().map(|i| open[i]).collect();
    picked.sort();
    picked
}

/// All pairs ordered by ascending initial absolute confidence.
pub fn static_ranking(n: usize, initial: &[SignedConfidence]) -> Vec<Pair> {
    let mut ranked: Vec<(Pair, SignedConfidence)> =
        candidate_edges(n).expect("n >= 2").into_iter().zip(initial.iter().copied()).collect();
    ranked.sort_by(by_magnitude);
    ranked.into_iter().map(|(p, _)| p).collect()
}

/// The next `count` unexperimented pairs in the fixed initial ranking.
pub fn select_static(ranking: &[Pair], state: &PredictionState, count: usize) -> Vec<Pair> {
    ranking.iter().copied().filter(|p| !state.is_experimented(*p)).take(count).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmSelection {
    /// Accepted proposals followed by random fill.
    pub pairs: Vec<Pair>,
    pub random_fill: Vec<Pair>,
    pub attempts: usize,
}

/// Asks the predictor for `count` edges given the labelled prediction (no
/// confidences). Invalid, duplicate or already-experimented proposals are
/// discarded; after [`MAX_PROPOSAL_REPROMPTS`] re-prompts the deficit is
/// filled uniformly at random.
pub fn select_llm_direct<P: Predictor + ?Sized, R: Rng + ?Sized>(
    variables: &VariableSet,
    state: &PredictionState,
    predictor: &mut P,
    count: usize,
    rng: &mut R,
    pair_limit: usize,
    abort_on_backend_error: bool,
) -> Result<LlmSelection, EngineError> {
    let total = state.edges().len();
    if total > pair_limit {
        return Err(EngineError::PolicyUnavailable(format!(
            "{total} candidate pairs exceed the llm-direct limit of {pair_limit}"
        )));
    }
    let want = count.min(state.remaining().len());
    let labels = state.labels();
    let mut accepted: Vec<Pair> = Vec::with_capacity(want);
    let mut attempts = 0;
    for attempt in 0..=MAX_PROPOSAL_REPROMPTS {
        if accepted.len() >= want {
            break;
        }
        attempts += 1;
        let ctx = ProposalContext {
            variables,
            labels: &labels,
            experimented: state.experimented(),
            count: want - accepted.len(),
            attempt,
        };
        match predictor.propose_experiments(&ctx) {
            Ok(proposals) => {
                for p in proposals {
                    if accepted.len() >= want {
                        break;
                    }
                    if variables.check_pair(p).is_ok() && !state.is_experimented(p) && !accepted.contains(&p) {
                        accepted.push(p);
                    }
                }
            }
            Err(PredictorError::Unsupported(msg)) => {
                tracing::warn!(%msg, "llm-direct proposals unavailable; filling at random");
                break;
            }
            Err(PredictorError::Backend(e)) if abort_on_backend_error => {
                return Err(PredictorError::Backend(e).into());
            }
            Err(e) => tracing::warn!(attempt, error = %e, "rejected llm-direct proposal"),
        }
    }
    let taken: BTreeSet<Pair> = accepted.iter().copied().collect();
    let pool: Vec<Pair> = state.remaining().into_iter().filter(|p| !taken.contains(p)).collect();
    let deficit = want - accepted.len();
    let mut fill: Vec<Pair> =
        rand::seq::index::sample(rng, pool.len(), deficit).into_iter().map(|i| pool[i]).collect();
    fill.sort();
    if !fill.is_empty() {
        tracing::warn!(filled = fill.len(), "llm-direct selection completed with random fill");
    }
    let mut pairs = accepted;
    pairs.extend(fill.iter().copied());
    Ok(LlmSelection { pairs, random_fill: fill, attempts })
}

/// Pairs whose belief should be revised after experimenting on `experiment`.
///
/// With [`AdjacencyScope::SharedEndpoint`] these are the same-parent pairs
/// `(i, k)` and same-child pairs `(l, j)`; the reverse pair `(j, i)` is not
/// included. Experimented pairs and pairs already at `|confidence| = 100`
/// are skipped.
pub fn adjacent_update_targets(
    state: &PredictionState,
    experiment: Pair,
    scope: AdjacencyScope,
) -> Vec<(Pair, Relation)> {
    let (i, j) = (experiment.parent, experiment.child);
    let n = state.node_count();
    let open = |p: &Pair| !state.is_experimented(*p) && !state.confidence(*p).is_certain();
    let mut out: Vec<(Pair, Relation)> = Vec::new();
    match scope {
        AdjacencyScope::SharedEndpoint => {
            out.extend((0..n).filter(|&k| k != i && k != j).map(|k| (Pair::new(i, k), Relation::SharesParent)));
            out.extend((0..n).filter(|&l| l != i && l != j).map(|l| (Pair::new(l, j), Relation::SharesChild)));
        }
        AdjacencyScope::AnyIncident => {
            for p in state.edges() {
                if *p == experiment {
                    continue;
                }
                if p.parent == i || p.child == i {
                    out.push((*p, Relation::SharesParent));
                } else if p.parent == j || p.child == j {
                    out.push((*p, Relation::SharesChild));
                }
            }
        }
    }
    out.retain(|(p, _)| open(p));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{candidate_count, EdgeLabel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_with(n: usize, values: &[((usize, usize), f64)], default: f64) -> PredictionState {
        let mut init = vec![SignedConfidence::new(default); candidate_count(n)];
        let probe = PredictionState::new(n, init.clone());
        for ((p, c), v) in values {
            init[probe.index(Pair::new(*p, *c))] = SignedConfidence::new(*v);
        }
        PredictionState::new(n, init)
    }

    #[test]
    fn uncertain_sorts_by_magnitude() {
        let mut s = state_with(3, &[((0, 1), 5.0), ((1, 0), -90.0), ((0, 2), 60.0), ((2, 0), -10.0)], 95.0);
        s.freeze(Pair::new(0, 2), EdgeLabel::Present);
        assert_eq!(select_uncertain(&s, 2), vec![Pair::new(0, 1), Pair::new(2, 0)]);
    }

    #[test]
    fn uncertain_tie_break_is_lexicographic() {
        let s = state_with(2, &[((0, 1), 20.0), ((1, 0), -20.0)], 0.0);
        assert_eq!(select_uncertain(&s, 1), vec![Pair::new(0, 1)]);
    }

    #[test]
    fn tail_round_returns_remaining() {
        let mut s = state_with(3, &[], 10.0);
        for p in [(0, 1), (0, 2), (1, 0)] {
            s.freeze(Pair::from(p), EdgeLabel::Present);
        }
        assert_eq!(select_uncertain(&s, 5).len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_random(&s, 3, &mut rng), s.remaining());
        for p in s.remaining() {
            s.freeze(p, EdgeLabel::Absent);
        }
        assert!(select_uncertain(&s, 5).is_empty());
        assert!(select_random(&s, 5, &mut rng).is_empty());
    }

    #[test]
    fn random_is_seeded() {
        let s = state_with(5, &[], 10.0);
        let a = select_random(&s, 4, &mut ChaCha8Rng::seed_from_u64(42));
        let b = select_random(&s, 4, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn static_walks_fixed_order() {
        let s0 = state_with(3, &[((2, 1), 1.0), ((1, 2), -2.0), ((0, 1), 3.0)], 50.0);
        let ranking = static_ranking(3, s0.confidences());
        let mut s = s0.clone();
        let first = select_static(&ranking, &s, 2);
        assert_eq!(first, vec![Pair::new(2, 1), Pair::new(1, 2)]);
        for p in &first {
            s.freeze(*p, EdgeLabel::Absent);
        }
        assert_eq!(select_static(&ranking, &s, 2), vec![Pair::new(0, 1), Pair::new(0, 2)]);
    }

    #[test]
    fn adjacency_definition() {
        let s = state_with(4, &[], 10.0);
        let t = adjacent_update_targets(&s, Pair::new(0, 1), AdjacencyScope::SharedEndpoint);
        assert_eq!(
            t,
            vec![
                (Pair::new(0, 2), Relation::SharesParent),
                (Pair::new(0, 3), Relation::SharesParent),
                (Pair::new(2, 1), Relation::SharesChild),
                (Pair::new(3, 1), Relation::SharesChild),
            ]
        );
        let mut s2 = s.clone();
        s2.freeze(Pair::new(0, 2), EdgeLabel::Present);
        let t2 = adjacent_update_targets(&s2, Pair::new(0, 1), AdjacencyScope::SharedEndpoint);
        assert!(!t2.iter().any(|(p, _)| *p == Pair::new(0, 2)));
        assert_eq!(t2.len(), 3);

        let tiny = state_with(2, &[], 10.0);
        assert!(adjacent_update_targets(&tiny, Pair::new(0, 1), AdjacencyScope::SharedEndpoint).is_empty());
    }

    #[test]
    fn saturated_pairs_are_not_targets() {
        let s = state_with(3, &[((0, 2), -100.0)], 10.0);
        let t = adjacent_update_targets(&s, Pair::new(0, 1), AdjacencyScope::SharedEndpoint);
        assert_eq!(t, vec![(Pair::new(2, 1), Relation::SharesChild)]);
    }

    #[test]
    fn wide_scope_includes_reverse_and_incident_pairs() {
        let s = state_with(3, &[], 10.0);
        let t = adjacent_update_targets(&s, Pair::new(0, 1), AdjacencyScope::AnyIncident);
        let pairs: Vec<Pair> = t.iter().map(|(p, _)| *p).collect();
        assert_eq!(pairs, vec![Pair::new(0, 2), Pair::new(1, 0), Pair::new(1, 2), Pair::new(2, 0), Pair::new(2, 1)]);
    }
}
