//! Synthetic ground-truth graphs for simulation studies.

use std::collections::BTreeSet;

use rand::Rng;

use crate::graph::{candidate_edges, GraphError, GraphFile, LoadedGraph, Pair, VariableSet};

/// Directed Erdős–Rényi graph on `n` variables named `X0..X{n-1}`: every
/// ordered pair is an edge independently with probability `edge_probability`.
/// Cycles and two-cycles are allowed. If no edge is drawn, one uniformly
/// chosen pair is added so that F1 is well defined.
pub fn random_graph<R: Rng + ?Sized>(
    n: usize,
    edge_probability: f64,
    rng: &mut R,
) -> Result<LoadedGraph, GraphError> {
    if !(0.0..=1.0).contains(&edge_probability) {
        return Err(GraphError::Invalid(format!("edge probability {edge_probability} outside [0, 1]")));
    }
    let pairs = candidate_edges(n)?;
    let mut edges: BTreeSet<Pair> = pairs.iter().copied().filter(|_| rng.gen_bool(edge_probability)).collect();
    if edges.is_empty() {
        edges.insert(pairs[rng.gen_range(0..pairs.len())]);
    }
    let variables = VariableSet::from_names(
        format!("A synthetic system of {n} variables."),
        (0..n).map(|i| (format!("X{i}"), format!("Synthetic variable {i}."))),
    )?;
    GraphFile::from_graph(&variables, Some(&edges)).load()
}
