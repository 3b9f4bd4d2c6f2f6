//! Helpers shared by the CLI integration tests.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn core_testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/testdata").join(name)
}

pub fn igda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igda")).args(args).output().expect("binary runs")
}

pub fn igda_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igda"))
        .current_dir(dir)
        .env_remove("IGDA_API_KEY")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

/// Writes a graph file with `n` variables `X0..`, and the given edges when
/// `edges` is `Some`.
pub fn write_graph(dir: &Path, name: &str, n: usize, edges: Option<&[(usize, usize)]>) -> PathBuf {
    let mut g = json!({
        "task_description": "A synthetic system.",
        "variables": (0..n).map(|i| json!({"name": format!("X{i}"), "description": format!("Variable {i}.")})).collect::<Vec<_>>(),
    });
    if let Some(edges) = edges {
        g["edges"] = json!(edges.iter().map(|(p, c)| [format!("X{p}"), format!("X{c}")]).collect::<Vec<_>>());
    }
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&g).unwrap()).unwrap();
    path
}

/// Every `*` file under `dir`, relative path → bytes.
pub fn tree(dir: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// A chat-completion endpoint whose reply is a pure function of the prompt,
/// so any run against it is reproducible.
pub struct MockLlm {
    pub base_url: String,
    pub calls: Arc<AtomicUsize>,
}

impl MockLlm {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

async fn reply(State(calls): State<Arc<AtomicUsize>>, Json(body): Json<Value>) -> Json<Value> {
    calls.fetch_add(1, Ordering::SeqCst);
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    let digest = Sha256::digest(prompt.as_bytes());
    let word = if digest[0] % 2 == 0 { "YES" } else { "NO" };
    let confidence = 1 + digest[1] % 100;
    let text = format!("Reasoning.\n<decision>{word}</decision>\n<confidence>{confidence}</confidence>");
    Json(json!({"choices": [{"message": {"role": "assistant", "content": text}}]}))
}

pub fn mock_llm() -> MockLlm {
    let calls = Arc::new(AtomicUsize::new(0));
    let app = Router::new().route("/v1/chat/completions", post(reply)).with_state(calls.clone());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap().block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    MockLlm { base_url: format!("http://{}/v1", rx.recv().unwrap()), calls }
}

/// A loopback address nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/v1")
}
