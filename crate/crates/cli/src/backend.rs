//! Building predictors from the resolved configuration, and the on-disk
//! cache of initial predictions shared by every method run on a graph.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use igda_core::engine::{initialize_observed, EngineError, InitialPrediction};
use igda_core::graph::{compute_metrics, GraphFile, GraphMetrics, LoadedGraph, Pair};
use igda_core::predictor::{
    OracleParams, Predictor, PredictorError, PromptPredictor, Script, ScriptedBackend, SimulatedPredictor,
};
use igda_gateway::Gateway;
use serde::{Deserialize, Serialize};

use crate::config::{short_hash, Backend, ResolvedConfig};
use crate::error::{Failure, ResultExt, BACKEND_UNREACHABLE, INVALID_INPUT, RUNTIME};

/// A predictor that can move to a worker thread.
pub type DynPredictor = Box<dyn Predictor + Send>;

pub fn load_graph(path: &Path) -> Result<(GraphFile, LoadedGraph), Failure> {
    let file = GraphFile::read(path).invalid(format!("graph {}", path.display()))?;
    let graph = file.load().invalid(format!("graph {}", path.display()))?;
    Ok((file, graph))
}

/// Where predictors come from; cheap to clone.
#[derive(Clone)]
pub enum BackendSpec {
    Llm(Arc<Gateway>),
    Simulated(OracleParams),
    Scripted { backend: ScriptedBackend, name: String },
}

impl BackendSpec {
    pub fn from_config(cfg: &ResolvedConfig) -> Result<Self, Failure> {
        Ok(match cfg.backend {
            Backend::Llm => {
                let gw = Gateway::new(cfg.gateway.clone()).invalid("completion gateway")?;
                BackendSpec::Llm(Arc::new(gw))
            }
            Backend::Simulated => BackendSpec::Simulated(cfg.simulated.clone()),
            Backend::Scripted => {
                let path = cfg.script.as_ref().ok_or_else(|| Failure::invalid_input("no --script given"))?;
                let text = std::fs::read_to_string(path).invalid(format!("script {}", path.display()))?;
                let script = Script::from_json(&text).invalid(format!("script {}", path.display()))?;
                let backend = ScriptedBackend::new(script).invalid("script")?;
                BackendSpec::Scripted { backend, name: format!("scripted({})", short_hash(text.as_bytes())) }
            }
        })
    }

    /// Fails early when the backend cannot work with this graph.
    pub fn check(&self, graph: &LoadedGraph) -> Result<(), Failure> {
        if matches!(self, BackendSpec::Simulated(_)) && graph.truth.is_none() {
            return Err(Failure::invalid_input("the simulated backend needs a graph file with `edges`"));
        }
        Ok(())
    }

    /// A fresh predictor. `seed` only matters to the simulated backend.
    pub fn predictor(&self, graph: &LoadedGraph, seed: u64) -> Result<DynPredictor, EngineError> {
        Ok(match self {
            BackendSpec::Llm(gw) => Box::new(PromptPredictor::new(gw.clone(), gw.config().describe())),
            BackendSpec::Simulated(params) => {
                let truth = graph
                    .truth
                    .as_ref()
                    .ok_or_else(|| EngineError::Config("the simulated backend needs ground truth".into()))?;
                Box::new(SimulatedPredictor::new(OracleParams { seed, ..params.clone() }, truth)?)
            }
            BackendSpec::Scripted { backend, name } => Box::new(PromptPredictor::new(backend.clone(), name.clone())),
        })
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendSpec::Llm(_))
    }
}

/// Exit code for an engine error: backend failures are 2, protocol and
/// configuration problems 1, everything else 5.
pub fn engine_failure(e: EngineError, context: &str) -> Failure {
    let code = match &e {
        EngineError::Predictor(PredictorError::Backend(_)) => BACKEND_UNREACHABLE,
        EngineError::Config(_) | EngineError::Graph(_) => INVALID_INPUT,
        _ => RUNTIME,
    };
    Failure::new(code, anyhow::Error::new(e).context(context.to_string()))
}

/// The cached initial prediction of one (graph, predictor, K).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G0Cache {
    pub graph_hash: String,
    pub predictor: String,
    pub samples: usize,
    pub initial: InitialPrediction,
    pub metrics: Option<GraphMetrics>,
}

pub fn g0_path(out: &Path, graph_hash: &str, predictor: &str, samples: usize) -> PathBuf {
    let key = short_hash(format!("{graph_hash}\u{0}{predictor}\u{0}{samples}").as_bytes());
    out.join(format!("g0-{key}.json"))
}

#[derive(Serialize)]
struct G0AuditLine<'a> {
    pair: Pair,
    parent: &'a str,
    child: &'a str,
    confidence: Option<f64>,
    samples: Vec<(String, u8)>,
    dropped: usize,
    flagged: bool,
    error: Option<String>,
}

/// Runs the zero-shot phase, writes the cache file and a per-pair audit
/// log, and returns the cache entry with its path.
pub fn compute_g0(
    cfg: &ResolvedConfig,
    graph: &LoadedGraph,
    backend: &BackendSpec,
) -> Result<(G0Cache, PathBuf), Failure> {
    backend.check(graph)?;
    let mut predictor = backend.predictor(graph, cfg.discovery.seed).map_err(|e| engine_failure(e, "predictor"))?;
    let desc = predictor.describe();
    let samples = cfg.discovery.zero_shot_samples;
    let path = g0_path(&cfg.out, &graph.hash, &desc, samples);
    let stem = path.file_stem().expect("file name").to_string_lossy().to_string();
    let audit_path = cfg.out.join("audit").join(format!("{stem}.jsonl"));
    std::fs::create_dir_all(audit_path.parent().expect("parent")).runtime("creating the audit directory")?;

    let mut audit = Vec::new();
    let vars = &graph.variables;
    let initial = initialize_observed(vars, &mut predictor, samples, backend.is_remote(), |pair, outcome| {
        let (confidence, samples, dropped, flagged, error) = match outcome {
            Ok(o) => (
                Some(o.confidence.value()),
                o.samples.iter().map(|s| (format!("{:?}", s.decision).to_uppercase(), s.confidence)).collect(),
                o.dropped,
                o.flagged,
                None,
            ),
            Err(e) => (None, Vec::new(), 0, true, Some(e.to_string())),
        };
        let line = G0AuditLine {
            pair,
            parent: vars.name(pair.parent),
            child: vars.name(pair.child),
            confidence,
            samples,
            dropped,
            flagged,
            error,
        };
        audit.push(serde_json::to_string(&line).expect("audit line serializes"));
    })
    .map_err(|e| engine_failure(e, "zero-shot prediction"))?;

    let metrics = match &graph.truth {
        Some(truth) => {
            let labels = vars.candidate_edges().into_iter().zip(initial.confidences.iter().map(|c| c.label())).collect();
            Some(compute_metrics(&labels, truth).runtime("scoring the initial prediction")?)
        }
        None => None,
    };
    let entry = G0Cache { graph_hash: graph.hash.clone(), predictor: desc, samples, initial, metrics };
    write_atomic(&path, serde_json::to_string_pretty(&entry).expect("cache serializes").as_bytes())?;
    let mut f = std::fs::File::create(&audit_path).runtime(format!("writing {}", audit_path.display()))?;
    for line in audit {
        writeln!(f, "{line}").runtime("writing the audit log")?;
    }
    Ok((entry, path))
}

/// Loads the cache entry matching this configuration, if it exists.
pub fn load_g0(
    cfg: &ResolvedConfig,
    graph: &LoadedGraph,
    backend: &BackendSpec,
) -> Result<Option<(G0Cache, PathBuf)>, Failure> {
    backend.check(graph)?;
    let desc = backend.predictor(graph, cfg.discovery.seed).map_err(|e| engine_failure(e, "predictor"))?.describe();
    let path = g0_path(&cfg.out, &graph.hash, &desc, cfg.discovery.zero_shot_samples);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).invalid(format!("reading {}", path.display()))?;
    let entry: G0Cache = serde_json::from_str(&text).invalid(format!("parsing {}", path.display()))?;
    if entry.graph_hash != graph.hash || entry.predictor != desc {
        return Err(Failure::invalid_input(format!("{} belongs to a different graph or predictor", path.display())));
    }
    Ok(Some((entry, path)))
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).runtime(format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).runtime(format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).runtime(format!("writing {}", path.display()))
}
