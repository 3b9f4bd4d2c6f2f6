use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{candidate_count, candidate_edges, pair_index, EdgeLabel, Pair, SignedConfidence};
use crate::predictor::signed_mean;

/// Confidences and experiment flags at the end of one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: usize,
    pub confidences: Vec<SignedConfidence>,
    pub experimented: Vec<bool>,
}

impl Snapshot {
    pub fn labels(&self) -> Vec<EdgeLabel> {
        self.confidences.iter().map(|c| c.label()).collect()
    }
}

/// The current prediction over all candidate pairs, indexed in
/// candidate-edge order.
#[derive(Clone, Debug)]
pub struct PredictionState {
    n: usize,
    edges: Vec<Pair>,
    confidences: Vec<SignedConfidence>,
    experimented: Vec<bool>,
    update_buffers: Vec<Vec<f64>>,
    round: usize,
    snapshots: Vec<Snapshot>,
}

impl PredictionState {
    /// State for round 0; records the initial snapshot.
    pub fn new(n: usize, initial: Vec<SignedConfidence>) -> Self {
        assert_eq!(initial.len(), candidate_count(n), "initial prediction must cover every pair");
        let m = initial.len();
        let mut s = PredictionState {
            n,
            edges: candidate_edges(n).expect("n >= 2"),
            confidences: initial,
            experimented: vec![false; m],
            update_buffers: vec![Vec::new(); m],
            round: 0,
            snapshots: Vec::new(),
        };
        s.snapshots.push(s.snapshot());
        s
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            round: self.round,
            confidences: self.confidences.clone(),
            experimented: self.experimented.clone(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Pair] {
        &self.edges
    }

    pub fn index(&self, pair: Pair) -> usize {
        pair_index(self.n, pair)
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn confidence(&self, pair: Pair) -> SignedConfidence {
        self.confidences[self.index(pair)]
    }

    pub fn confidences(&self) -> &[SignedConfidence] {
        &self.confidences
    }

    pub fn is_experimented(&self, pair: Pair) -> bool {
        self.experimented[self.index(pair)]
    }

    pub fn experimented(&self) -> &[bool] {
        &self.experimented
    }

    pub fn experimented_count(&self) -> usize {
        self.experimented.iter().filter(|e| **e).count()
    }

    pub fn labels(&self) -> Vec<EdgeLabel> {
        self.confidences.iter().map(|c| c.label()).collect()
    }

    pub fn label_map(&self) -> BTreeMap<Pair, EdgeLabel> {
        self.edges.iter().copied().zip(self.labels()).collect()
    }

    /// Unexperimented pairs in candidate order.
    pub fn remaining(&self) -> Vec<Pair> {
        self.edges
            .iter()
            .zip(&self.experimented)
            .filter(|(_, e)| !**e)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn pending_updates(&self, pair: Pair) -> &[f64] {
        &self.update_buffers[self.index(pair)]
    }

    /// Pins an experimented pair at `±100` and excludes it from later
    /// selection and updates.
    pub(crate) fn freeze(&mut self, pair: Pair, label: EdgeLabel) {
        let i = self.index(pair);
        debug_assert!(!self.experimented[i], "pair {pair} experimented twice");
        self.experimented[i] = true;
        self.confidences[i] = SignedConfidence::certain(label);
        self.update_buffers[i].clear();
    }

    pub(crate) fn push_update(&mut self, pair: Pair, value: SignedConfidence) {
        let i = self.index(pair);
        debug_assert!(!self.experimented[i], "update targeted experimented pair {pair}");
        self.update_buffers[i].push(value.value());
    }

    /// Replaces every buffered pair's confidence with the mean of its
    /// buffer, clears the buffers and records the end-of-round snapshot.
    pub(crate) fn finish_round(&mut self) {
        for (i, buf) in self.update_buffers.iter_mut().enumerate() {
            if !buf.is_empty() {
                self.confidences[i] = signed_mean(buf.drain(..));
            }
        }
        self.round += 1;
        self.snapshots.push(self.snapshot());
    }
}
