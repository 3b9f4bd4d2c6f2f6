//! Graph data model, candidate-edge enumeration and F1 accounting.
//!
//! Every ordered pair `(parent, child)` with `parent != child` is a candidate
//! edge. Predictions and ground truth are both binary label maps over that
//! candidate set, and a prediction's quality is its F1 score against truth.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("pair ({0}, {1}) is not a candidate edge")]
    Domain(NodeId, NodeId),
    #[error("label map coverage: {0}")]
    Coverage(String),
    #[error("failed to read graph file: {0}")]
    Io(String),
}

/// An ordered pair of variable ids. Serialized as `[parent, child]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(NodeId, NodeId)", into = "(NodeId, NodeId)")]
pub struct Pair {
    pub parent: NodeId,
    pub child: NodeId,
}

impl Pair {
    pub const fn new(parent: NodeId, child: NodeId) -> Self {
        Pair { parent, child }
    }

    pub fn reversed(self) -> Self {
        Pair::new(self.child, self.parent)
    }

    pub fn shares_node(self, other: Pair) -> bool {
        self.parent == other.parent
            || self.parent == other.child
            || self.child == other.parent
            || self.child == other.child
    }
}

impl From<(NodeId, NodeId)> for Pair {
    fn from((parent, child): (NodeId, NodeId)) -> Self {
        Pair::new(parent, child)
    }
}

impl From<Pair> for (NodeId, NodeId) {
    fn from(p: Pair) -> Self {
        (p.parent, p.child)
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.parent, self.child)
    }
}

/// Binary edge label: `0` absent, `1` present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum EdgeLabel {
    Absent,
    Present,
}

impl EdgeLabel {
    pub fn from_bool(present: bool) -> Self {
        if present {
            EdgeLabel::Present
        } else {
            EdgeLabel::Absent
        }
    }

    pub fn is_present(self) -> bool {
        self == EdgeLabel::Present
    }

    /// `+1.0` for present, `-1.0` for absent.
    pub fn sign(self) -> f64 {
        match self {
            EdgeLabel::Present => 1.0,
            EdgeLabel::Absent => -1.0,
        }
    }
}

impl From<EdgeLabel> for u8 {
    fn from(l: EdgeLabel) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for EdgeLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(EdgeLabel::Absent),
            1 => Ok(EdgeLabel::Present),
            other => Err(format!("edge label must be 0 or 1, got {other}")),
        }
    }
}

/// Maximum magnitude of a signed confidence; experimented edges sit here.
pub const MAX_CONFIDENCE: f64 = 100.0;

/// Confidence in `[-100, 100]`. The sign is the predicted direction
/// (`>= 0` means present) and the magnitude is the certainty.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct SignedConfidence(f64);

impl SignedConfidence {
    pub const NEUTRAL: SignedConfidence = SignedConfidence(0.0);

    /// Clamps into `[-100, 100]`. NaN maps to the neutral value.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            return Self::NEUTRAL;
        }
        SignedConfidence(value.clamp(-MAX_CONFIDENCE, MAX_CONFIDENCE))
    }

    /// The frozen value for an experimented edge with the given revealed label.
    pub fn certain(label: EdgeLabel) -> Self {
        SignedConfidence(label.sign() * MAX_CONFIDENCE)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn magnitude(self) -> f64 {
        self.0.abs()
    }

    pub fn label(self) -> EdgeLabel {
        EdgeLabel::from_bool(self.0 >= 0.0)
    }

    pub fn uncertainty(self) -> f64 {
        MAX_CONFIDENCE - self.0.abs()
    }

    pub fn is_certain(self) -> bool {
        self.0.abs() >= MAX_CONFIDENCE
    }
}

impl From<f64> for SignedConfidence {
    fn from(v: f64) -> Self {
        SignedConfidence::new(v)
    }
}

impl From<SignedConfidence> for f64 {
    fn from(c: SignedConfidence) -> f64 {
        c.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub id: NodeId,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// The variables of a discovery problem together with the task preamble.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSet {
    pub task_description: String,
    variables: Vec<VariableSpec>,
}

impl VariableSet {
    pub fn new(
        task_description: impl Into<String>,
        variables: Vec<VariableSpec>,
    ) -> Result<Self, GraphError> {
        if variables.len() < 2 {
            return Err(GraphError::Invalid(format!(
                "need at least 2 variables, got {}",
                variables.len()
            )));
        }
        let mut names = HashSet::new();
        for (idx, v) in variables.iter().enumerate() {
            if v.id != idx {
                return Err(GraphError::Invalid(format!(
                    "variable ids must be 0..n-1 in order; position {idx} has id {}",
                    v.id
                )));
            }
            if !names.insert(v.name.as_str()) {
                return Err(GraphError::Invalid(format!("duplicate variable name {:?}", v.name)));
            }
        }
        Ok(VariableSet { task_description: task_description.into(), variables })
    }

    /// Builds a set from `(name, description)` tuples, assigning ids by position.
    pub fn from_names<S: Into<String>, D: Into<String>>(
        task_description: impl Into<String>,
        items: impl IntoIterator<Item = (S, D)>,
    ) -> Result<Self, GraphError> {
        let variables = items
            .into_iter()
            .enumerate()
            .map(|(id, (name, description))| VariableSpec {
                id,
                name: name.into(),
                description: description.into(),
            })
            .collect();
        Self::new(task_description, variables)
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Option<&VariableSpec> {
        self.variables.get(id)
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.variables[id].name
    }

    pub fn id_of(&self, name: &str) -> Option<NodeId> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.iter()
    }

    pub fn candidate_edges(&self) -> Vec<Pair> {
        candidate_edges(self.len()).expect("variable sets hold at least two variables")
    }

    pub fn check_pair(&self, pair: Pair) -> Result<(), GraphError> {
        check_pair(self.len(), pair)
    }
}

/// Simple directed graph answering edge experiments. Cycles are allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthGraph {
    pub variables: VariableSet,
    edges: BTreeSet<Pair>,
}

impl GroundTruthGraph {
    pub fn new(
        variables: VariableSet,
        edges: impl IntoIterator<Item = Pair>,
    ) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for e in edges {
            check_pair(variables.len(), e)?;
            set.insert(e);
        }
        if set.is_empty() {
            tracing::warn!("ground-truth graph has no edges; F1 will be 0 for every prediction");
        }
        Ok(GroundTruthGraph { variables, edges: set })
    }

    pub fn node_count(&self) -> usize {
        self.variables.len()
    }

    pub fn edges(&self) -> &BTreeSet<Pair> {
        &self.edges
    }

    /// Reveals the ground-truth label of one candidate pair.
    pub fn label_of(&self, parent: NodeId, child: NodeId) -> Result<EdgeLabel, GraphError> {
        let pair = Pair::new(parent, child);
        check_pair(self.node_count(), pair)?;
        Ok(EdgeLabel::from_bool(self.edges.contains(&pair)))
    }

    pub fn label_map(&self) -> BTreeMap<Pair, EdgeLabel> {
        self.variables
            .candidate_edges()
            .into_iter()
            .map(|p| (p, EdgeLabel::from_bool(self.edges.contains(&p))))
            .collect()
    }
}

fn check_pair(n: usize, pair: Pair) -> Result<(), GraphError> {
    if pair.parent == pair.child || pair.parent >= n || pair.child >= n {
        Err(GraphError::Domain(pair.parent, pair.child))
    } else {
        Ok(())
    }
}

/// All ordered pairs `(i, j)`, `i != j`, in lexicographic order.
pub fn candidate_edges(n: usize) -> Result<Vec<Pair>, GraphError> {
    if n < 2 {
        return Err(GraphError::Invalid(format!("need at least 2 nodes, got {n}")));
    }
    Ok((0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| Pair::new(i, j)))
        .collect())
}

/// Position of `pair` in [`candidate_edges`] order.
pub fn pair_index(n: usize, pair: Pair) -> usize {
    debug_assert!(pair.parent != pair.child && pair.parent < n && pair.child < n);
    let col = if pair.child < pair.parent { pair.child } else { pair.child - 1 };
    pair.parent * (n - 1) + col
}

pub fn candidate_count(n: usize) -> usize {
    n * n.saturating_sub(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl GraphMetrics {
    /// Derives precision, recall and F1 from confusion counts. Undefined
    /// ratios are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        GraphMetrics {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            precision,
            recall,
            f1,
        }
    }
}

fn check_coverage(n: usize, labels: &BTreeMap<Pair, EdgeLabel>) -> Result<(), GraphError> {
    if let Some(bad) = labels.keys().find(|p| check_pair(n, **p).is_err()) {
        return Err(GraphError::Coverage(format!("extra pair {bad}")));
    }
    let expected = candidate_count(n);
    if labels.len() != expected {
        return Err(GraphError::Coverage(format!(
            "expected {expected} pairs, found {}",
            labels.len()
        )));
    }
    Ok(())
}

/// Confusion counts and F1 of a predicted label map against the truth.
pub fn compute_metrics(
    predicted: &BTreeMap<Pair, EdgeLabel>,
    truth: &GroundTruthGraph,
) -> Result<GraphMetrics, GraphError> {
    check_coverage(truth.node_count(), predicted)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (pair, label) in predicted {
        match (label.is_present(), truth.edges.contains(pair)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(GraphMetrics::from_counts(tp, fp, fn_, tn))
}

/// Edge-change accounting between consecutive rounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovementBreakdown {
    pub experiment_improvements: usize,
    pub update_improvements: usize,
    pub regressions: usize,
    pub net_improvement: i64,
    pub total_changed: usize,
}

impl ImprovementBreakdown {
    pub fn total_improvements(&self) -> usize {
        self.experiment_improvements + self.update_improvements
    }
}

/// Attributes each label change between two rounds. A change that fixes an
/// edge counts as an experiment improvement when the edge was experimented
/// this round and as an update improvement otherwise; a change that breaks an
/// edge is a regression.
pub fn diff_rounds(
    prev: &BTreeMap<Pair, EdgeLabel>,
    next: &BTreeMap<Pair, EdgeLabel>,
    truth: &GroundTruthGraph,
    experimented_this_round: &BTreeSet<Pair>,
) -> Result<ImprovementBreakdown, GraphError> {
    let n = truth.node_count();
    check_coverage(n, prev)?;
    check_coverage(n, next)?;
    let mut out = ImprovementBreakdown::default();
    for (pair, before) in prev {
        let after = next[pair];
        if after == *before {
            continue;
        }
        out.total_changed += 1;
        let correct_now = after.is_present() == truth.edges.contains(pair);
        if correct_now {
            if experimented_this_round.contains(pair) {
                out.experiment_improvements += 1;
            } else {
                out.update_improvements += 1;
            }
        } else {
            out.regressions += 1;
        }
    }
    out.net_improvement = out.total_improvements() as i64 - out.regressions as i64;
    Ok(out)
}

/// On-disk graph description. Ids are assigned by position in `variables`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFile {
    #[serde(default)]
    pub task_description: String,
    pub variables: Vec<GraphFileVariable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(String, String)>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFileVariable {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// A parsed graph file: the variables plus the ground truth when the file has
/// an `edges` field.
#[derive(Clone, Debug)]
pub struct LoadedGraph {
    pub variables: VariableSet,
    pub truth: Option<GroundTruthGraph>,
    /// Stable content hash of the file's canonical JSON form.
    pub hash: String,
}

impl GraphFile {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Invalid(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_graph(variables: &VariableSet, edges: Option<&BTreeSet<Pair>>) -> Self {
        GraphFile {
            task_description: variables.task_description.clone(),
            variables: variables
                .iter()
                .map(|v| GraphFileVariable { name: v.name.clone(), description: v.description.clone() })
                .collect(),
            edges: edges.map(|es| {
                es.iter()
                    .map(|e| (variables.name(e.parent).to_string(), variables.name(e.child).to_string()))
                    .collect()
            }),
        }
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("graph file serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Validates names and edges and assigns ids.
    pub fn load(&self) -> Result<LoadedGraph, GraphError> {
        let variables = VariableSet::from_names(
            self.task_description.clone(),
            self.variables.iter().map(|v| (v.name.clone(), v.description.clone())),
        )?;
        let truth = match &self.edges {
            None => None,
            Some(edges) => {
                let mut pairs = Vec::with_capacity(edges.len());
                for (p, c) in edges {
                    let lookup = |name: &str| {
                        variables
                            .id_of(name)
                            .ok_or_else(|| GraphError::Invalid(format!("unknown endpoint {name:?}")))
                    };
                    let (pi, ci) = (lookup(p)?, lookup(c)?);
                    if pi == ci {
                        return Err(GraphError::Invalid(format!("self-edge on {p:?}")));
                    }
                    pairs.push(Pair::new(pi, ci));
                }
                Some(GroundTruthGraph::new(variables.clone(), pairs)?)
            }
        };
        Ok(LoadedGraph { variables, truth, hash: self.hash() })
    }
}
