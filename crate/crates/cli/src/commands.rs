//! The batch commands: `predict`, `discover` and `analyze`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use igda_core::analysis::{
    aggregate_curves, f1_curve, improvement_series, rank_methods, write_curves_csv, write_improvements_csv,
    write_ranks_csv, AnalysisError, Curve,
};
use igda_core::engine::{derive_seed, run_batch, EngineError, ExperimentOracle, RunLog, TruthOracle};
use igda_core::graph::{pair_index, EdgeLabel, GroundTruthGraph, Pair, VariableSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{compute_g0, engine_failure, load_g0, load_graph, write_atomic, BackendSpec};
use crate::config::{
    short_hash, AnalyzeArgs, Backend, DiscoverArgs, OracleChoice, PredictArgs, ResolvedConfig,
};
use crate::error::{Failure, ResultExt, BACKEND_UNREACHABLE, GRID_MISMATCH, INVALID_INPUT, RUNTIME};

pub fn predict(args: &PredictArgs) -> Result<(), Failure> {
    let cfg = ResolvedConfig::resolve(&args.common, None)?;
    let (_, graph) = load_graph(&cfg.graph)?;
    let backend = BackendSpec::from_config(&cfg)?;
    let (entry, path) = compute_g0(&cfg, &graph, &backend)?;
    println!("initial prediction: {}", path.display());
    println!(
        "pairs: {}  samples per pair: {}  flagged: {}",
        entry.initial.confidences.len(),
        entry.samples,
        entry.initial.flagged.len()
    );
    if let Some(m) = entry.metrics {
        println!("F1 {:.4}  precision {:.4}  recall {:.4}", m.f1, m.precision, m.recall);
    }
    Ok(())
}

/// Answers from the truth, flipped with probability `1 - accuracy`. Each
/// pair's draw depends only on the seed and the pair, so every run of a
/// batch sees the same answers.
pub struct NoisyOracle<'a> {
    truth: &'a GroundTruthGraph,
    accuracy: f64,
    seed: u64,
}

impl<'a> NoisyOracle<'a> {
    pub fn new(truth: &'a GroundTruthGraph, accuracy: f64, seed: u64) -> Self {
        NoisyOracle { truth, accuracy, seed }
    }
}

impl ExperimentOracle for NoisyOracle<'_> {
    fn answer(&mut self, pair: Pair) -> Result<EdgeLabel, EngineError> {
        let label = self.truth.label_of(pair.parent, pair.child)?;
        let idx = pair_index(self.truth.node_count(), pair);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed ^ 0x6f72_6163_6c65, idx));
        Ok(if rng.gen_bool(self.accuracy) { label } else { EdgeLabel::from_bool(!label.is_present()) })
    }
}

/// Asks a person on the terminal.
pub struct TerminalOracle<'a, R> {
    variables: &'a VariableSet,
    input: R,
}

impl<'a, R: BufRead> TerminalOracle<'a, R> {
    pub fn new(variables: &'a VariableSet, input: R) -> Self {
        TerminalOracle { variables, input }
    }
}

impl<R: BufRead> ExperimentOracle for TerminalOracle<'_, R> {
    fn answer(&mut self, pair: Pair) -> Result<EdgeLabel, EngineError> {
        let (p, c) = (self.variables.name(pair.parent), self.variables.name(pair.child));
        loop {
            eprint!("Does {p} directly cause {c}? [y/n] ");
            let mut line = String::new();
            let read = self.input.read_line(&mut line).map_err(|e| EngineError::Oracle {
                pair,
                message: e.to_string(),
            })?;
            if read == 0 {
                return Err(EngineError::Oracle { pair, message: "input closed".into() });
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" | "1" => return Ok(EdgeLabel::Present),
                "n" | "no" | "0" => return Ok(EdgeLabel::Absent),
                _ => eprintln!("please answer y or n"),
            }
        }
    }
}

/// Directory holding the run logs of one discover invocation.
pub fn runs_dir(cfg: &ResolvedConfig, graph_hash: &str) -> PathBuf {
    cfg.out.join("runs").join(format!(
        "{}-{}-{}",
        cfg.discovery.method_label(),
        &graph_hash[..12],
        cfg.hash()
    ))
}

pub fn discover(args: &DiscoverArgs) -> Result<(), Failure> {
    let cfg = ResolvedConfig::resolve(&args.common, Some(&args.looping))?.with_discover_flags(args)?;
    let (_, graph) = load_graph(&cfg.graph)?;
    let backend = BackendSpec::from_config(&cfg)?;
    let (entry, g0_path) = match load_g0(&cfg, &graph, &backend)? {
        Some(found) => found,
        None if args.init => compute_g0(&cfg, &graph, &backend)?,
        None => {
            let desc = backend.predictor(&graph, cfg.discovery.seed).map_err(|e| engine_failure(e, "predictor"))?;
            return Err(Failure::invalid_input(format!(
                "no initial prediction cached for this graph and predictor ({}, K={}); run `igda predict` with \
                 the same settings or pass --init",
                desc.describe(),
                cfg.discovery.zero_shot_samples
            )));
        }
    };
    tracing::info!(path = %g0_path.display(), "using initial prediction");

    let needs_truth = matches!(cfg.oracle, OracleChoice::Truth | OracleChoice::Simulated);
    let truth = graph.truth.clone();
    if needs_truth && truth.is_none() {
        return Err(Failure::invalid_input("this oracle needs a graph file with `edges`; use --oracle session"));
    }
    let stdin = std::io::stdin();
    let mut oracle: Box<dyn ExperimentOracle + '_> = match cfg.oracle {
        OracleChoice::Truth => Box::new(TruthOracle(truth.as_ref().expect("checked"))),
        OracleChoice::Simulated => {
            Box::new(NoisyOracle::new(truth.as_ref().expect("checked"), cfg.oracle_accuracy, cfg.discovery.seed))
        }
        OracleChoice::Session => Box::new(TerminalOracle::new(&graph.variables, stdin.lock())),
    };

    let batch = run_batch(
        &graph,
        &cfg.discovery,
        Some(&entry.initial),
        |_, seed| backend.predictor(&graph, seed),
        |pair: Pair| oracle.answer(pair),
    )
    .map_err(|e| engine_failure(e, "discovery"))?;

    for (run, message) in &batch.failures {
        eprintln!("run {run} failed: {message}");
    }
    if batch.logs.is_empty() {
        let code = if cfg.backend == Backend::Llm { BACKEND_UNREACHABLE } else { RUNTIME };
        return Err(Failure::new(code, anyhow::anyhow!("every run failed")));
    }

    let dir = runs_dir(&cfg, &graph.hash);
    std::fs::create_dir_all(&dir).runtime(format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(&cfg).expect("config serializes").as_bytes())?;
    let failed: BTreeSet<usize> = batch.failures.iter().map(|(r, _)| *r).collect();
    let succeeded = (0..cfg.discovery.runs).filter(|r| !failed.contains(r));
    for (run, log) in succeeded.zip(&batch.logs) {
        let path = dir.join(format!("run-{run:03}.jsonl"));
        write_atomic(&path, log.to_jsonl().as_bytes())?;
    }
    println!("runs: {} ({} written, {} failed)", dir.display(), batch.logs.len(), batch.failures.len());

    let method = cfg.discovery.method_label();
    if let Some(curve) = &batch.curve {
        let path = cfg.out.join(format!("curves-{method}-{}-{}.csv", &graph.hash[..12], cfg.hash()));
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &BTreeMap::from([(method.clone(), curve.clone())])).runtime("curves")?;
        write_atomic(&path, &buf)?;
        let last = curve.points.last().expect("curve has points");
        println!("curves: {}", path.display());
        println!(
            "{method}: final mean F1 {:.4} ± {:.4} over {} runs, AUC {:.4}",
            last.f1_mean,
            last.f1_spread,
            batch.logs.len(),
            curve.auc()
        );
    } else {
        println!("{method}: no ground truth, F1 not computed");
    }
    Ok(())
}

fn analysis_failure(e: AnalysisError, context: &str) -> Failure {
    let code = match e {
        AnalysisError::Alignment(_) => GRID_MISMATCH,
        _ => INVALID_INPUT,
    };
    Failure::new(code, anyhow::Error::new(e).context(context.to_string()))
}

fn expand(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(path).invalid(format!("reading {}", path.display()))? {
        let p = entry.invalid(format!("reading {}", path.display()))?.path();
        if p.extension().is_some_and(|e| e == "jsonl") {
            found.push(p);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Failure::invalid_input(format!("no .jsonl logs in {}", path.display())));
    }
    Ok(found)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    if !args.labels.is_empty() && args.labels.len() != args.logs.len() {
        return Err(Failure::invalid_input(format!(
            "{} labels for {} log arguments",
            args.labels.len(),
            args.logs.len()
        )));
    }
    let mut groups: BTreeMap<String, Vec<RunLog>> = BTreeMap::new();
    let mut graph_hashes = BTreeSet::new();
    let mut identity = Vec::new();
    for (i, arg) in args.logs.iter().enumerate() {
        for path in expand(arg)? {
            let log = RunLog::read_file(&path).invalid(format!("run log {}", path.display()))?;
            let header = log.header().ok_or_else(|| Failure::invalid_input(format!("{}: no header", path.display())))?;
            let label = args.labels.get(i).cloned().unwrap_or_else(|| header.method.clone());
            graph_hashes.insert(header.graph_hash.clone());
            identity.push(format!("{label}\u{0}{}", serde_json::to_string(header).expect("header serializes")));
            groups.entry(label).or_default().push(log);
        }
    }
    if graph_hashes.len() > 1 {
        return Err(Failure::new(
            GRID_MISMATCH,
            anyhow::anyhow!("logs come from {} different graphs", graph_hashes.len()),
        ));
    }
    let graph_hash = graph_hashes.into_iter().next().expect("at least one log");
    identity.sort();
    let suffix = format!("{}-{}", &graph_hash[..12.min(graph_hash.len())], short_hash(identity.join("\n").as_bytes()));

    let mut curves: BTreeMap<String, Curve> = BTreeMap::new();
    let mut improvements = Vec::new();
    for (label, logs) in &groups {
        let per_run = logs
            .iter()
            .map(f1_curve)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| analysis_failure(e, label))?;
        let curve = aggregate_curves(&per_run, args.spread.into()).map_err(|e| analysis_failure(e, label))?;
        curves.insert(label.clone(), curve);
        for (run, log) in logs.iter().enumerate() {
            let rows = improvement_series(log).map_err(|e| analysis_failure(e, label))?;
            improvements.push((label.clone(), run, rows));
        }
    }

    std::fs::create_dir_all(&args.out).runtime(format!("creating {}", args.out.display()))?;
    let mut written = Vec::new();
    let mut emit = |name: String, buf: Vec<u8>| -> Result<(), Failure> {
        let path = args.out.join(name);
        write_atomic(&path, &buf)?;
        written.push(path);
        Ok(())
    };
    let mut buf = Vec::new();
    write_curves_csv(&mut buf, &curves).runtime("curves")?;
    emit(format!("curves-{suffix}.csv"), buf)?;
    let ranks = if curves.len() >= 2 {
        let table = rank_methods(&curves).map_err(|e| analysis_failure(e, "ranking"))?;
        let mut buf = Vec::new();
        write_ranks_csv(&mut buf, &table).runtime("ranks")?;
        emit(format!("ranks-{suffix}.csv"), buf)?;
        Some(table)
    } else {
        None
    };
    let mut buf = Vec::new();
    write_improvements_csv(&mut buf, &improvements).runtime("improvements")?;
    emit(format!("improvements-{suffix}.csv"), buf)?;

    for (label, curve) in &curves {
        let runs = groups[label].len();
        let final_f1 = curve.final_f1().unwrap_or(f64::NAN);
        let rank = ranks.as_ref().map(|t| format!("  mean rank {:.3}", t.average[label])).unwrap_or_default();
        println!("{label}: runs {runs}  final F1 {final_f1:.4}  AUC {:.4}{rank}", curve.auc());
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> GroundTruthGraph {
        let vars = VariableSet::from_names("", [("A", ""), ("B", ""), ("C", "")]).unwrap();
        GroundTruthGraph::new(vars, [Pair::new(0, 1)]).unwrap()
    }

    #[test]
    fn noisy_oracle_is_order_independent_and_exact_at_full_accuracy() {
        let t = truth();
        let pairs = igda_core::graph::candidate_edges(3).unwrap();
        let forward: Vec<_> = pairs.iter().map(|p| NoisyOracle::new(&t, 0.5, 4).answer(*p).unwrap()).collect();
        let mut o = NoisyOracle::new(&t, 0.5, 4);
        let mut backward: Vec<_> = pairs.iter().rev().map(|p| o.answer(*p).unwrap()).collect();
        backward.reverse();
        assert_eq!(forward, backward);
        let mut exact = NoisyOracle::new(&t, 1.0, 4);
        for p in pairs {
            assert_eq!(exact.answer(p).unwrap(), t.label_of(p.parent, p.child).unwrap());
        }
    }

    #[test]
    fn terminal_oracle_reprompts_until_answered() {
        let vars = VariableSet::from_names("", [("A", ""), ("B", "")]).unwrap();
        let mut o = TerminalOracle::new(&vars, "maybe\ny\nNO\n".as_bytes());
        assert_eq!(o.answer(Pair::new(0, 1)).unwrap(), EdgeLabel::Present);
        assert_eq!(o.answer(Pair::new(1, 0)).unwrap(), EdgeLabel::Absent);
        assert!(o.answer(Pair::new(1, 0)).is_err(), "closed input");
    }
}
