//! Interactive sessions: the discovery loop with a person as the experiment
//! oracle, exposed as a JSON API.
//!
//! Each session owns one [`Discovery`] run. A round's proposal stays open
//! until every proposed pair has feedback; the last answer commits the
//! round and the next proposal is drawn immediately. Feedback can be taken
//! back only while its round is open.
//!
//! Every mutation is written to `sessions/{id}.json` before the response
//! is sent. On start-up the server replays each file through a fresh engine
//! (initial prediction, committed rounds, then the open round's partial
//! answers), so sessions survive restarts as long as the predictor is
//! deterministic for a given seed and completion cache.
//!
//! Mutations carry an optional client `request_id`; a repeated id returns
//! the current state without applying anything twice.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use igda_core::engine::{initialize, Discovery, DiscoveryConfig, EngineError, InitialPrediction, LogRecord};
use igda_core::graph::{
    EdgeLabel, GraphFile, GraphMetrics, ImprovementBreakdown, LoadedGraph, Pair, SignedConfidence,
};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::backend::{g0_path, write_atomic, BackendSpec, DynPredictor, G0Cache};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn conflict(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) | EngineError::Graph(_) => ApiError::bad_request(e.to_string()),
            EngineError::Finished | EngineError::Protocol(_) => ApiError::conflict(e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub pair: Pair,
    pub label: EdgeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

/// Everything needed to rebuild a session.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub create_request_id: Option<String>,
    pub graph: GraphFile,
    pub config: DiscoveryConfig,
    pub initial: InitialPrediction,
    /// Answers of each committed round, in proposal order.
    pub committed: Vec<Vec<(Pair, EdgeLabel)>>,
    /// Answers given so far in the open round.
    pub partial: Vec<Feedback>,
    pub request_ids: BTreeSet<String>,
}

pub struct Session {
    record: SessionRecord,
    discovery: Discovery<DynPredictor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalView {
    pub pair: Pair,
    pub parent: String,
    pub child: String,
    pub parent_description: String,
    pub child_description: String,
    pub confidence: f64,
    /// Feedback already given in this round.
    pub answer: Option<EdgeLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub method: String,
    /// The open round, or the last round once finished.
    pub round: usize,
    pub rounds: usize,
    pub finished: bool,
    pub proposals: Vec<ProposalView>,
    /// Proposed pairs still waiting for feedback.
    pub pending: Vec<Pair>,
    pub experimented: usize,
    pub budget_fraction: f64,
    /// Against the graph's edges, when the graph has them.
    pub metrics: Option<GraphMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableView {
    pub name: String,
    pub description: String,
}

/// Row `i`, column `j` describes the pair `i → j`; the diagonal is null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub variables: Vec<VariableView>,
    pub confidences: Vec<Vec<Option<f64>>>,
    pub labels: Vec<Vec<Option<EdgeLabel>>>,
    pub experimented: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// 0 is the initial prediction.
    pub round: usize,
    pub selection: Vec<Pair>,
    pub feedback: Vec<(Pair, EdgeLabel)>,
    pub experimented: usize,
    pub metrics: Option<GraphMetrics>,
    pub improvements: Option<ImprovementBreakdown>,
    pub confidences: Vec<f64>,
}

impl Session {
    fn build(record: SessionRecord, backend: &BackendSpec) -> Result<Self, ApiError> {
        let graph = record.graph.load().map_err(|e| ApiError::bad_request(e.to_string()))?;
        backend.check(&graph).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let predictor = backend.predictor(&graph, record.config.seed)?;
        let mut discovery = Discovery::new(&graph, record.config.clone(), predictor, record.initial.clone())?;
        for (r, answers) in record.committed.iter().enumerate() {
            let proposal = discovery.propose()?;
            let answered: Vec<Pair> = answers.iter().map(|(p, _)| *p).collect();
            if proposal != answered {
                return Err(ApiError::internal(format!(
                    "replay diverged in round {}: engine proposed {proposal:?}, record has {answered:?}",
                    r + 1
                )));
            }
            discovery.commit(answers)?;
        }
        if !discovery.is_finished() {
            let proposal = discovery.propose()?;
            if let Some(stray) = record.partial.iter().find(|f| !proposal.contains(&f.pair)) {
                return Err(ApiError::internal(format!("recorded feedback for unproposed pair {}", stray.pair)));
            }
        }
        Ok(Session { record, discovery })
    }

    pub fn view(&self) -> SessionView {
        let d = &self.discovery;
        let state = d.state();
        let vars = d.variables();
        let answered: BTreeMap<Pair, EdgeLabel> = self.record.partial.iter().map(|f| (f.pair, f.label)).collect();
        let proposal = d.pending().unwrap_or(&[]);
        let proposals = proposal
            .iter()
            .map(|&pair| {
                let (p, c) = (vars.get(pair.parent).expect("pair"), vars.get(pair.child).expect("pair"));
                ProposalView {
                    pair,
                    parent: p.name.clone(),
                    child: c.name.clone(),
                    parent_description: p.description.clone(),
                    child_description: c.description.clone(),
                    confidence: state.confidence(pair).value(),
                    answer: answered.get(&pair).copied(),
                }
            })
            .collect();
        let finished = d.is_finished();
        SessionView {
            id: self.record.id.clone(),
            method: d.config().method_label(),
            round: if finished { state.round() } else { state.round() + 1 },
            rounds: d.config().rounds,
            finished,
            proposals,
            pending: proposal.iter().copied().filter(|p| !answered.contains_key(p)).collect(),
            experimented: state.experimented_count(),
            budget_fraction: state.experimented_count() as f64 / state.edges().len() as f64,
            metrics: d.log().summaries().last().and_then(|s| s.metrics),
        }
    }

    pub fn graph_view(&self) -> GraphView {
        let d = &self.discovery;
        let state = d.state();
        let n = state.node_count();
        let mut confidences = vec![vec![None; n]; n];
        let mut labels = vec![vec![None; n]; n];
        let mut experimented = vec![vec![false; n]; n];
        for &pair in state.edges() {
            let c: SignedConfidence = state.confidence(pair);
            confidences[pair.parent][pair.child] = Some(c.value());
            labels[pair.parent][pair.child] = Some(c.label());
            experimented[pair.parent][pair.child] = state.is_experimented(pair);
        }
        GraphView {
            variables: d
                .variables()
                .iter()
                .map(|v| VariableView { name: v.name.clone(), description: v.description.clone() })
                .collect(),
            confidences,
            labels,
            experimented,
        }
    }

    pub fn history(&self) -> Vec<HistoryEntry> {
        let log = self.discovery.log();
        let mut selections: BTreeMap<usize, Vec<Pair>> = BTreeMap::new();
        let mut feedback: BTreeMap<usize, Vec<(Pair, EdgeLabel)>> = BTreeMap::new();
        for record in &log.records {
            match record {
                LogRecord::RoundSelection { round, pairs, .. } => {
                    selections.insert(*round, pairs.clone());
                }
                LogRecord::Experiment { round, pair, label } => feedback.entry(*round).or_default().push((*pair, *label)),
                _ => {}
            }
        }
        log.summaries()
            .map(|s| HistoryEntry {
                round: s.round,
                selection: selections.get(&s.round).cloned().unwrap_or_default(),
                feedback: feedback.get(&s.round).cloned().unwrap_or_default(),
                experimented: s.experimented,
                metrics: s.metrics,
                improvements: s.improvements,
                confidences: s.confidences.clone(),
            })
            .collect()
    }

    /// Records one answer; commits the round when it completes.
    pub fn give_feedback(&mut self, fb: Feedback) -> Result<bool, ApiError> {
        if let Some(id) = &fb.request_id {
            if self.record.request_ids.contains(id) {
                return Ok(false);
            }
        }
        if self.discovery.is_finished() {
            return Err(ApiError::conflict("the session is finished"));
        }
        let proposal = self.discovery.pending().map(<[Pair]>::to_vec).unwrap_or_default();
        if !proposal.contains(&fb.pair) {
            return Err(ApiError::conflict(format!("{} is not proposed in this round", fb.pair)));
        }
        if let Some(prev) = self.record.partial.iter().find(|f| f.pair == fb.pair) {
            if prev.label == fb.label {
                return Ok(false);
            }
            return Err(ApiError::conflict(format!(
                "{} already has feedback; take it back before answering differently",
                fb.pair
            )));
        }
        if let Some(id) = &fb.request_id {
            self.record.request_ids.insert(id.clone());
        }
        self.record.partial.push(fb);
        if self.record.partial.len() == proposal.len() {
            let answers: BTreeMap<Pair, EdgeLabel> = self.record.partial.iter().map(|f| (f.pair, f.label)).collect();
            let ordered: Vec<(Pair, EdgeLabel)> = proposal.iter().map(|p| (*p, answers[p])).collect();
            self.discovery.commit(&ordered)?;
            self.record.committed.push(ordered);
            self.record.partial.clear();
            if !self.discovery.is_finished() {
                self.discovery.propose()?;
            }
        }
        Ok(true)
    }

    /// Takes back an answer in the open round.
    pub fn undo(&mut self, pair: Pair, request_id: Option<String>) -> Result<bool, ApiError> {
        if let Some(id) = &request_id {
            if self.record.request_ids.contains(id) {
                return Ok(false);
            }
        }
        if self.record.committed.iter().flatten().any(|(p, _)| *p == pair) {
            return Err(ApiError::conflict(format!("{pair} belongs to a committed round")));
        }
        let before = self.record.partial.len();
        self.record.partial.retain(|f| f.pair != pair);
        if let Some(id) = request_id {
            self.record.request_ids.insert(id);
        }
        Ok(self.record.partial.len() != before)
    }

    fn save(&self, dir: &Path) -> Result<(), ApiError> {
        let path = dir.join(format!("{}.json", self.record.id));
        let bytes = serde_json::to_vec_pretty(&self.record).expect("session record serializes");
        write_atomic(&path, &bytes).map_err(ApiError::internal)
    }
}

pub struct ServerState {
    out: PathBuf,
    backend: BackendSpec,
    defaults: DiscoveryConfig,
    default_graph: Option<GraphFile>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    by_request: Mutex<HashMap<String, String>>,
}

impl ServerState {
    /// Loads and replays every saved session under `out/sessions`.
    pub fn open(
        out: PathBuf,
        backend: BackendSpec,
        defaults: DiscoveryConfig,
        default_graph: Option<GraphFile>,
    ) -> std::io::Result<Self> {
        let state = ServerState {
            out,
            backend,
            defaults,
            default_graph,
            sessions: Mutex::default(),
            by_request: Mutex::default(),
        };
        let dir = state.sessions_dir();
        if dir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            files.sort();
            for path in files {
                let record: SessionRecord = match std::fs::read(&path)
                    .map_err(|e| e.to_string())
                    .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
                {
                    Ok(r) => r,
                    Err(e) => {
                        tracing::warn!(path = %path.display(), error = %e, "skipping unreadable session file");
                        continue;
                    }
                };
                let id = record.id.clone();
                let request = record.create_request_id.clone();
                match Session::build(record, &state.backend) {
                    Ok(session) => {
                        if let Some(r) = request {
                            state.by_request.lock().expect("lock").insert(r, id.clone());
                        }
                        state.sessions.lock().expect("lock").insert(id.clone(), Arc::new(Mutex::new(session)));
                        tracing::info!(%id, "restored session");
                    }
                    Err(e) => tracing::warn!(%id, error = %e.message, "could not restore session"),
                }
            }
        }
        Ok(state)
    }

    fn sessions_dir(&self) -> PathBuf {
        self.out.join("sessions")
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    /// Builds and stores a new session, or returns the one already created
    /// for `request.request_id`.
    pub fn create(&self, request: CreateRequest) -> Result<String, ApiError> {
        if let Some(r) = &request.request_id {
            if let Some(id) = self.by_request.lock().expect("lock").get(r) {
                return Ok(id.clone());
            }
        }
        let graph_file = request
            .graph
            .or_else(|| self.default_graph.clone())
            .ok_or_else(|| ApiError::bad_request("no graph given and the server has no default graph"))?;
        let graph = graph_file.load().map_err(|e| ApiError::bad_request(e.to_string()))?;
        self.backend.check(&graph).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let config = merge_config(&self.defaults, request.config)?;
        config.validate()?;
        let initial = self.initial_prediction(&graph, &config)?;
        let id = uuid::Uuid::new_v4().to_string();
        let record = SessionRecord {
            id: id.clone(),
            create_request_id: request.request_id.clone(),
            graph: graph_file,
            config,
            initial,
            committed: Vec::new(),
            partial: Vec::new(),
            request_ids: BTreeSet::new(),
        };
        let session = Session::build(record, &self.backend)?;

        let mut by_request = self.by_request.lock().expect("lock");
        if let Some(r) = &request.request_id {
            if let Some(existing) = by_request.get(r) {
                return Ok(existing.clone());
            }
            by_request.insert(r.clone(), id.clone());
        }
        session.save(&self.sessions_dir())?;
        self.sessions.lock().expect("lock").insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    /// The cached initial prediction for this graph and predictor when one
    /// exists in the output directory, else a fresh zero-shot pass.
    fn initial_prediction(&self, graph: &LoadedGraph, config: &DiscoveryConfig) -> Result<InitialPrediction, ApiError> {
        let mut predictor = self.backend.predictor(graph, config.seed)?;
        let path = g0_path(&self.out, &graph.hash, &predictor.describe(), config.zero_shot_samples);
        if let Ok(bytes) = std::fs::read(&path) {
            match serde_json::from_slice::<G0Cache>(&bytes) {
                Ok(entry) if entry.graph_hash == graph.hash => return Ok(entry.initial),
                _ => tracing::warn!(path = %path.display(), "ignoring unusable initial-prediction cache"),
            }
        }
        Ok(initialize(&graph.variables, &mut predictor, config.zero_shot_samples, self.backend.is_remote())?)
    }

    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&Session) -> T) -> Result<T, ApiError> {
        let session = self.session(id)?;
        let guard = session.lock().expect("session lock");
        Ok(f(&guard))
    }

    /// Applies a mutation, persisting the session when it changed.
    pub fn mutate(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<bool, ApiError>,
    ) -> Result<SessionView, ApiError> {
        let session = self.session(id)?;
        let mut guard = session.lock().expect("session lock");
        if f(&mut guard)? {
            guard.save(&self.sessions_dir())?;
        }
        Ok(guard.view())
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("lock").keys().cloned().collect();
        ids.sort();
        ids
    }
}

/// Overlays the keys of `partial` on the server's default configuration.
fn merge_config(defaults: &DiscoveryConfig, partial: Option<serde_json::Value>) -> Result<DiscoveryConfig, ApiError> {
    let mut base = serde_json::to_value(defaults).expect("config serializes");
    match partial {
        None | Some(serde_json::Value::Null) => {}
        Some(serde_json::Value::Object(fields)) => {
            let obj = base.as_object_mut().expect("config is an object");
            for (k, v) in fields {
                if !obj.contains_key(&k) {
                    return Err(ApiError::bad_request(format!("unknown config field {k:?}")));
                }
                obj.insert(k, v);
            }
        }
        Some(_) => return Err(ApiError::bad_request("config must be an object")),
    }
    serde_json::from_value(base).map_err(|e| ApiError::bad_request(format!("config: {e}")))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub graph: Option<GraphFile>,
    /// Any subset of the discovery settings.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

#[derive(Debug, Deserialize)]
pub struct UndoQuery {
    pub request_id: Option<String>,
}

type Shared = Arc<ServerState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn create(State(s): State<Shared>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let id = blocking(move || s.create(req)).await?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.ids())
}

async fn show(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    s.with_session(&id, Session::view).map(Json)
}

async fn feedback(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(fb): Json<Feedback>,
) -> Result<Json<SessionView>, ApiError> {
    blocking(move || s.mutate(&id, |session| session.give_feedback(fb))).await.map(Json)
}

async fn undo(
    State(s): State<Shared>,
    UrlPath((id, parent, child)): UrlPath<(String, usize, usize)>,
    Query(q): Query<UndoQuery>,
) -> Result<Json<SessionView>, ApiError> {
    blocking(move || s.mutate(&id, |session| session.undo(Pair::new(parent, child), q.request_id))).await.map(Json)
}

async fn graph(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<GraphView>, ApiError> {
    s.with_session(&id, Session::graph_view).map(Json)
}

async fn history(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<HistoryEntry>>, ApiError> {
    s.with_session(&id, Session::history).map(Json)
}

pub fn router(state: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create).get(list))
        .route("/api/sessions/{id}", get(show))
        .route("/api/sessions/{id}/feedback", post(feedback))
        .route("/api/sessions/{id}/feedback/{parent}/{child}", delete(undo))
        .route("/api/sessions/{id}/graph", get(graph))
        .route("/api/sessions/{id}/history", get(history))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
