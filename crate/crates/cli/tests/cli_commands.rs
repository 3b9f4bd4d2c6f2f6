//! The `igda` binary end to end: outputs, exit codes and determinism.

mod common;

use std::path::{Path, PathBuf};

use common::*;
use igda_core::engine::RunLog;

fn run_files(out: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let runs = out.join("runs");
    for d in std::fs::read_dir(runs).unwrap() {
        for f in std::fs::read_dir(d.unwrap().path()).unwrap() {
            let p = f.unwrap().path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
    }
    files.sort();
    files
}

fn g0_file(out: &Path) -> PathBuf {
    std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("g0-"))
        .expect("initial prediction written")
}

fn six_node_graph(dir: &Path) -> PathBuf {
    write_graph(dir, "g.json", 6, Some(&[(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (3, 5)]))
}

#[test]
fn predict_with_simulated_backend_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let g = graph.to_str().unwrap();
    let mut bytes = Vec::new();
    for out in ["a", "b"] {
        let o = igda_in(dir.path(), &["predict", "--graph", g, "--backend", "simulated", "--seed", "7", "--out", out]);
        assert_ok(&o);
        assert!(stdout(&o).contains("F1 "), "{}", stdout(&o));
        bytes.push(std::fs::read(g0_file(&dir.path().join(out))).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let audit: Vec<_> = std::fs::read_dir(dir.path().join("a/audit")).unwrap().collect();
    assert_eq!(audit.len(), 1, "one per-pair audit log");
}

#[test]
fn predict_without_edges_omits_f1() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path(), "g.json", 5, None);
    let o = igda_in(
        dir.path(),
        &[
            "predict",
            "--graph",
            graph.to_str().unwrap(),
            "--backend",
            "scripted",
            "--script",
            core_testdata("golden_script.json").to_str().unwrap(),
            "--out",
            "out",
        ],
    );
    assert_ok(&o);
    assert!(!stdout(&o).contains("F1"), "{}", stdout(&o));
    let cache: serde_json::Value = serde_json::from_slice(&std::fs::read(g0_file(&dir.path().join("out"))).unwrap()).unwrap();
    assert_eq!(cache["initial"]["confidences"].as_array().unwrap().len(), 20);
    assert!(cache["metrics"].is_null());
}

#[test]
fn predict_issues_k_samples_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path(), "g.json", 8, Some(&[(0, 1)]));
    let mock = mock_llm();
    let o = igda_in(
        dir.path(),
        &["predict", "--graph", graph.to_str().unwrap(), "--samples", "16", "--base-url", &mock.base_url, "--out", "out"],
    );
    assert_ok(&o);
    assert_eq!(mock.calls(), 56 * 16);
    // The same command again is served from the completion cache.
    let o = igda_in(
        dir.path(),
        &["predict", "--graph", graph.to_str().unwrap(), "--samples", "16", "--base-url", &mock.base_url, "--out", "out"],
    );
    assert_ok(&o);
    assert_eq!(mock.calls(), 56 * 16);
}

#[test]
fn invalid_graph_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"variables": [{"name": "A"}, {"name": "A"}]}"#).unwrap();
    let o = igda_in(dir.path(), &["predict", "--graph", bad.to_str().unwrap(), "--backend", "simulated"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = igda_in(dir.path(), &["predict", "--graph", "missing.json", "--backend", "simulated"]);
    assert_eq!(o.status.code(), Some(1));
    let o = igda_in(dir.path(), &["predict", "--graph", "x.json", "--policy", "nope"]);
    assert_eq!(o.status.code(), Some(1), "usage errors are invalid input");
}

#[test]
fn unreachable_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_graph(dir.path(), "g.json", 3, None);
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "[gateway]\nmax_retries = 0\nbackoff_base_ms = 1\ntimeout_secs = 2.0\n").unwrap();
    let o = igda_in(
        dir.path(),
        &["predict", "--config", config.to_str().unwrap(), "--graph", graph.to_str().unwrap(), "--base-url", &dead_url()],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn discover_reproduces_the_golden_trace() {
    #[derive(serde::Deserialize)]
    struct Trace {
        snapshots: Vec<Vec<f64>>,
    }
    let dir = tempfile::tempdir().unwrap();
    let o = igda_in(
        dir.path(),
        &[
            "discover",
            "--graph",
            core_testdata("golden_graph.json").to_str().unwrap(),
            "--backend",
            "scripted",
            "--script",
            core_testdata("golden_script.json").to_str().unwrap(),
            "--policy",
            "uncertainty",
            "--updates",
            "local",
            "--rounds",
            "3",
            "--per-round",
            "3",
            "--runs",
            "1",
            "--init",
            "--out",
            "out",
        ],
    );
    assert_ok(&o);
    let files = run_files(&dir.path().join("out"));
    assert_eq!(files.len(), 1);
    let log = RunLog::read_file(&files[0]).unwrap();
    let trace: Trace = serde_json::from_str(&std::fs::read_to_string(core_testdata("golden_trace.json")).unwrap()).unwrap();
    let got: Vec<Vec<f64>> = log.summaries().map(|s| s.confidences.clone()).collect();
    assert_eq!(got, trace.snapshots);
}

fn discover_args<'a>(graph: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "discover", "--graph", graph, "--backend", "simulated", "--rounds", "6", "--per-round", "5", "--samples", "4",
        "--out", out,
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn discover_needs_a_cached_initial_prediction_or_init() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let g = graph.to_str().unwrap();
    let o = igda_in(dir.path(), &discover_args(g, "out", &[]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("igda predict"), "{}", stderr(&o));

    // `predict` with the same settings fills the cache discover looks up.
    assert_ok(&igda_in(dir.path(), &["predict", "--graph", g, "--backend", "simulated", "--samples", "4", "--out", "out"]));
    assert_ok(&igda_in(dir.path(), &discover_args(g, "out", &["--runs", "1"])));
}

#[test]
fn five_runs_give_five_logs_and_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let o = igda_in(
        dir.path(),
        &discover_args(graph.to_str().unwrap(), "out", &["--policy", "random", "--updates", "none", "--runs", "5", "--init"]),
    );
    assert_ok(&o);
    assert!(stdout(&o).contains("random+none: final mean F1"), "{}", stdout(&o));
    let files = run_files(&dir.path().join("out"));
    assert_eq!(files.len(), 5);
    let seeds: std::collections::BTreeSet<u64> =
        files.iter().map(|f| RunLog::read_file(f).unwrap().header().unwrap().seed).collect();
    assert_eq!(seeds.len(), 5, "each run has its own seed");
    let curves: Vec<_> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .filter(|n| n.starts_with("curves-random+none-") && n.ends_with(".csv"))
        .collect();
    assert_eq!(curves.len(), 1);
}

#[test]
fn static_policy_is_seed_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let g = graph.to_str().unwrap();
    let script = core_testdata("golden_script.json");
    let mut bodies = Vec::new();
    for seed in ["1", "2"] {
        let out = format!("out{seed}");
        let o = igda_in(
            dir.path(),
            &[
                "discover", "--graph", g, "--backend", "scripted", "--script", script.to_str().unwrap(), "--policy",
                "static", "--updates", "local", "--rounds", "4", "--per-round", "3", "--runs", "1", "--seed", seed,
                "--init", "--out", &out,
            ],
        );
        assert_ok(&o);
        let files = run_files(&dir.path().join(&out));
        let text = std::fs::read_to_string(&files[0]).unwrap();
        // Everything after the header (which records the seed) must match.
        bodies.push(text.lines().skip(1).map(str::to_owned).collect::<Vec<_>>());
    }
    assert_eq!(bodies[0], bodies[1]);
}

fn produce_logs(dir: &Path, graph: &str, method: (&str, &str), runs: &str, rounds: &str) -> PathBuf {
    let out = format!("out-{}-{}-{rounds}", method.0, method.1);
    let o = igda_in(
        dir,
        &[
            "discover", "--graph", graph, "--backend", "simulated", "--policy", method.0, "--updates", method.1,
            "--rounds", rounds, "--per-round", "4", "--samples", "3", "--runs", runs, "--init", "--out", &out,
        ],
    );
    assert_ok(&o);
    let runs_root = dir.join(&out).join("runs");
    std::fs::read_dir(&runs_root).unwrap().next().unwrap().unwrap().path()
}

fn analysis_outputs(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().to_string()).collect();
    names.sort();
    names
}

#[test]
fn analyze_single_method_writes_no_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let logs = produce_logs(dir.path(), graph.to_str().unwrap(), ("random", "none"), "2", "5");
    let o = igda_in(dir.path(), &["analyze", logs.to_str().unwrap(), "--out", "analysis"]);
    assert_ok(&o);
    let names = analysis_outputs(&dir.path().join("analysis"));
    assert_eq!(names.len(), 2, "{names:?}");
    assert!(names.iter().any(|n| n.starts_with("curves-")));
    assert!(names.iter().any(|n| n.starts_with("improvements-")));

    // strategy=none never credits updates.
    let imp = names.iter().find(|n| n.starts_with("improvements-")).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("analysis").join(imp)).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 5);
    assert!(rows.iter().all(|r| &r[4] == "0"), "update_improvements column");
}

#[test]
fn analyze_three_methods_ranks_sum_to_three_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let g = graph.to_str().unwrap();
    let a = produce_logs(dir.path(), g, ("uncertainty", "local"), "2", "5");
    let b = produce_logs(dir.path(), g, ("random", "none"), "2", "5");
    let c = produce_logs(dir.path(), g, ("static", "none"), "2", "5");
    let o = igda_in(dir.path(), &["analyze", a.to_str().unwrap(), b.to_str().unwrap(), c.to_str().unwrap(), "--out", "an"]);
    assert_ok(&o);
    let names = analysis_outputs(&dir.path().join("an"));
    let ranks = names.iter().find(|n| n.starts_with("ranks-")).expect("ranks written");
    let mut rdr = csv::Reader::from_path(dir.path().join("an").join(ranks)).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 4);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    for row in rows.iter().filter(|r| &r[0] != "mean") {
        let sum: f64 = (1..4).map(|i| row[i].parse::<f64>().unwrap()).sum();
        assert_eq!(sum, 3.0, "{row:?}");
    }
}

#[test]
fn analyze_grid_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let g = graph.to_str().unwrap();
    let short = produce_logs(dir.path(), g, ("random", "none"), "1", "3");
    let long = produce_logs(dir.path(), g, ("random", "none"), "1", "5");
    let o = igda_in(
        dir.path(),
        &["analyze", short.to_str().unwrap(), long.to_str().unwrap(), "--label", "m", "--label", "m", "--out", "an"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let other = write_graph(dir.path(), "other.json", 4, Some(&[(0, 1)]));
    let foreign = produce_logs(dir.path(), other.to_str().unwrap(), ("static", "none"), "1", "3");
    let o = igda_in(dir.path(), &["analyze", short.to_str().unwrap(), foreign.to_str().unwrap(), "--out", "an"]);
    assert_eq!(o.status.code(), Some(3), "logs from two graphs");
}

#[test]
fn serve_on_a_busy_port_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = igda_in(
        dir.path(),
        &["serve", "--graph", graph.to_str().unwrap(), "--backend", "simulated", "--port", &port],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn outputs_stay_inside_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let graph = six_node_graph(dir.path());
    let before = tree(dir.path()).len();
    let o = igda_in(dir.path(), &discover_args(graph.to_str().unwrap(), "out", &["--runs", "2", "--init"]));
    assert_ok(&o);
    let after: Vec<PathBuf> = tree(dir.path()).into_keys().collect();
    assert_eq!(after.iter().filter(|p| !p.starts_with("out")).count(), before);
}
