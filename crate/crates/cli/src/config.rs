//! Command-line flags, the optional TOML config file, and their merge.
//!
//! Precedence is explicit flag, then config file, then built-in default.
//! The merged [`ResolvedConfig`] is written next to every output so a run
//! can be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use igda_core::analysis::Spread;
use igda_core::engine::{DiscoveryConfig, SelectionPolicy, UpdateStrategy};
use igda_core::predictor::OracleParams;
use igda_gateway::GatewayConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Failure, ResultExt};

#[derive(Debug, Parser)]
#[command(name = "igda", version, about = "Interactive graph discovery with a predictor in the loop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Zero-shot prediction of every pair; writes the shared initial-graph cache.
    Predict(PredictArgs),
    /// Run discovery (select, experiment, update) for one or more seeds.
    Discover(DiscoverArgs),
    /// Curves, method ranks and improvement series from run logs.
    Analyze(AnalyzeArgs),
    /// Serve the interactive session API (humans answer the experiments).
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Chat-completion endpoint.
    Llm,
    /// Seeded synthetic predictor answering from the ground truth.
    Simulated,
    /// Deterministic replies from a script file.
    Scripted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OracleChoice {
    /// Answer experiments from the graph file's edges.
    Truth,
    /// Answer from the edges, flipping each pair's answer with probability
    /// `1 - oracle_accuracy` (fixed per pair across runs).
    Simulated,
    /// Ask on the terminal.
    Session,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Uncertainty,
    Random,
    Static,
    LlmDirect,
}

impl From<PolicyArg> for SelectionPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Uncertainty => SelectionPolicy::Uncertainty,
            PolicyArg::Random => SelectionPolicy::Random,
            PolicyArg::Static => SelectionPolicy::Static,
            PolicyArg::LlmDirect => SelectionPolicy::LlmDirect,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum UpdatesArg {
    Local,
    None,
    Global,
}

impl From<UpdatesArg> for UpdateStrategy {
    fn from(u: UpdatesArg) -> Self {
        match u {
            UpdatesArg::Local => UpdateStrategy::Local,
            UpdatesArg::None => UpdateStrategy::None,
            UpdatesArg::Global => UpdateStrategy::Global,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpreadArg {
    StdDev,
    Envelope,
}

impl From<SpreadArg> for Spread {
    fn from(s: SpreadArg) -> Self {
        match s {
            SpreadArg::StdDev => Spread::StdDev,
            SpreadArg::Envelope => Spread::Envelope,
        }
    }
}

/// Flags shared by every command that builds a predictor.
#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of these settings.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Graph description (JSON: task_description, variables, optional edges).
    #[arg(long, value_name = "PATH")]
    pub graph: Option<PathBuf>,
    /// Output directory; nothing is written outside it.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Zero-shot samples per pair (K).
    #[arg(long, value_name = "K")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "URL")]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Upper bound on concurrent completion requests.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Always call the endpoint, ignoring and not writing the response cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Script for the scripted backend.
    #[arg(long, value_name = "PATH")]
    pub script: Option<PathBuf>,
    /// Simulated predictor: probability a zero-shot decision is correct.
    #[arg(long, value_name = "A")]
    pub sim_accuracy: Option<f64>,
    /// Simulated predictor: confidence gap between correct and incorrect samples.
    #[arg(long, value_name = "G")]
    pub sim_gap: Option<f64>,
    /// Simulated predictor: probability a local update moves toward the truth.
    #[arg(long, value_name = "U")]
    pub sim_fidelity: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Flags that shape the discovery loop.
#[derive(Clone, Debug, Default, Args)]
pub struct LoopArgs {
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    pub updates: Option<UpdatesArg>,
    /// Rounds per run (R).
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Experiments per round (I).
    #[arg(long)]
    pub per_round: Option<usize>,
    /// Samples per local-update call.
    #[arg(long)]
    pub update_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub looping: LoopArgs,
    /// Independent runs, each with a seed derived from --seed.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Compute the initial prediction if its cache file is missing.
    #[arg(long)]
    pub init: bool,
    #[arg(long, value_enum)]
    pub oracle: Option<OracleChoice>,
    /// Simulated oracle: probability each answer is correct.
    #[arg(long)]
    pub oracle_accuracy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run logs, or directories searched for `*.jsonl` logs.
    #[arg(required = true, value_name = "LOG")]
    pub logs: Vec<PathBuf>,
    /// Method label per LOG argument, in order; defaults to each log's own method.
    #[arg(long = "label", value_name = "NAME")]
    pub labels: Vec<String>,
    #[arg(long, value_name = "DIR", default_value = "out/analysis")]
    pub out: PathBuf,
    /// Across-run spread reported with each mean.
    #[arg(long, value_enum, default_value = "std-dev")]
    pub spread: SpreadArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub looping: LoopArgs,
    #[arg(long)]
    pub port: Option<u16>,
    /// Built UI assets to serve at `/`.
    #[arg(long, value_name = "DIR")]
    pub ui_dir: Option<PathBuf>,
}

/// The config file. Every table is optional and partial tables keep the
/// defaults of their missing keys.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub backend: Option<Backend>,
    pub script: Option<PathBuf>,
    pub oracle: Option<OracleChoice>,
    pub oracle_accuracy: Option<f64>,
    pub port: Option<u16>,
    pub ui_dir: Option<PathBuf>,
    pub discovery: DiscoveryConfig,
    pub gateway: GatewayConfig,
    pub simulated: OracleParams,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).invalid(format!("reading config {}", path.display()))?;
        toml::from_str(&text).invalid(format!("parsing config {}", path.display()))
    }
}

/// Fully merged settings of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub graph: PathBuf,
    pub out: PathBuf,
    pub backend: Backend,
    pub script: Option<PathBuf>,
    pub oracle: OracleChoice,
    pub oracle_accuracy: f64,
    pub port: u16,
    pub ui_dir: Option<PathBuf>,
    pub discovery: DiscoveryConfig,
    pub gateway: GatewayConfig,
    pub simulated: OracleParams,
}

pub const DEFAULT_PORT: u16 = 8080;

impl ResolvedConfig {
    pub fn resolve(common: &CommonArgs, looping: Option<&LoopArgs>) -> Result<Self, Failure> {
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let graph = common
            .graph
            .clone()
            .or(file.graph)
            .ok_or_else(|| Failure::invalid_input("no graph given (use --graph or `graph` in the config file)"))?;
        let out = common.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out"));

        let mut discovery = file.discovery;
        if let Some(k) = common.samples {
            discovery.zero_shot_samples = k;
        }
        if let Some(seed) = common.seed {
            discovery.seed = seed;
        }
        if let Some(l) = looping {
            if let Some(p) = l.policy {
                discovery.policy = p.into();
            }
            if let Some(u) = l.updates {
                discovery.strategy = u.into();
            }
            if let Some(r) = l.rounds {
                discovery.rounds = r;
            }
            if let Some(i) = l.per_round {
                discovery.per_round = i;
            }
            if let Some(s) = l.update_samples {
                discovery.update_samples = s;
            }
        }

        let mut gateway = file.gateway;
        if let Some(u) = &common.base_url {
            gateway.base_url = u.clone();
        }
        if let Some(m) = &common.model {
            gateway.model = m.clone();
        }
        if let Some(t) = common.temperature {
            gateway.temperature = t;
        }
        if let Some(m) = common.max_in_flight {
            gateway.max_in_flight = m;
        }
        if common.no_cache {
            gateway.cache = false;
        }
        if gateway.cache && gateway.cache_path.is_none() {
            gateway.cache_path = Some(out.join("cache").join("completions.jsonl"));
        }
        if gateway.audit_path.is_none() {
            gateway.audit_path = Some(out.join("audit").join("completions.jsonl"));
        }

        let mut simulated = file.simulated;
        if let Some(a) = common.sim_accuracy {
            simulated.zero_shot_accuracy = a;
        }
        if let Some(g) = common.sim_gap {
            simulated.calibration_gap = g;
        }
        if let Some(u) = common.sim_fidelity {
            simulated.update_fidelity = u;
        }

        let resolved = ResolvedConfig {
            graph,
            out,
            backend: common.backend.or(file.backend).unwrap_or(Backend::Llm),
            script: common.script.clone().or(file.script),
            oracle: file.oracle.unwrap_or(OracleChoice::Truth),
            oracle_accuracy: file.oracle_accuracy.unwrap_or(1.0),
            port: file.port.unwrap_or(DEFAULT_PORT),
            ui_dir: file.ui_dir,
            discovery,
            gateway,
            simulated,
        };
        resolved.discovery.validate().invalid("configuration")?;
        if resolved.backend == Backend::Llm {
            resolved.gateway.validate().invalid("gateway configuration")?;
        }
        if resolved.backend == Backend::Simulated {
            resolved.simulated.validate().invalid("simulated predictor configuration")?;
        }
        if resolved.backend == Backend::Scripted && resolved.script.is_none() {
            return Err(Failure::invalid_input("the scripted backend needs --script"));
        }
        Ok(resolved)
    }

    /// Applies the flags only `discover` has.
    pub fn with_discover_flags(mut self, args: &DiscoverArgs) -> Result<Self, Failure> {
        if let Some(r) = args.runs {
            self.discovery.runs = r;
        }
        if let Some(o) = args.oracle {
            self.oracle = o;
        }
        if let Some(a) = args.oracle_accuracy {
            self.oracle_accuracy = a;
        }
        if !(0.0..=1.0).contains(&self.oracle_accuracy) {
            return Err(Failure::invalid_input(format!(
                "oracle accuracy {} outside [0, 1]",
                self.oracle_accuracy
            )));
        }
        self.discovery.validate().invalid("configuration")?;
        Ok(self)
    }

    /// Hash of the settings that influence results. Output locations, the
    /// port and the gateway's transport settings are excluded, so moving the
    /// output directory or replaying from the cache keeps names.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out");
            obj.remove("port");
            obj.remove("ui_dir");
            if let Some(gw) = obj.get_mut("gateway").and_then(|g| g.as_object_mut()) {
                gw.remove("cache_path");
                gw.remove("audit_path");
                for transport in ["base_url", "timeout_secs", "max_retries", "backoff_base_ms", "max_in_flight", "cache"] {
                    gw.remove(transport);
                }
            }
        }
        short_hash(value.to_string().as_bytes())
    }
}

/// First 12 hex digits of a SHA-256, for file names.
pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..12].to_string()
}
