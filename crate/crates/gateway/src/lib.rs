//! Chat-completion transport for the prompt-driven predictor.
//!
//! [`Gateway`] sends one single-message chat completion per `(prompt,
//! sample_index)`, retries transport failures, 429 and 5xx responses with
//! exponential backoff and jitter, bounds the number of requests in flight,
//! caches responses on disk for deterministic replay and appends one
//! [`CompletionRecord`] per completion to a JSONL audit log.
//!
//! The API key is read from `IGDA_API_KEY` and is never written anywhere.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use igda_core::predictor::{BackendError, CompletionBackend};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "IGDA_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    /// The endpoint rejected the request in a way retrying cannot fix.
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("cache or audit file: {0}")]
    Io(#[from] std::io::Error),
}

impl From<GatewayError> for BackendError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::Rejected { .. } => BackendError::Config(e.to_string()),
            GatewayError::Transport { .. } | GatewayError::Io(_) => BackendError::Transport(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Endpoint root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Sampling temperature. The default of 0.7 is a choice, not a
    /// measured setting.
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub max_retries: usize,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub cache: bool,
    /// JSONL response cache; required when `cache` is on.
    pub cache_path: Option<PathBuf>,
    /// JSONL audit log of every completion.
    pub audit_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "meta-llama/Meta-Llama-3-70B-Instruct".into(),
            temperature: 0.7,
            max_tokens: 1024,
            timeout_secs: 120.0,
            max_retries: 4,
            backoff_base_ms: 500,
            max_in_flight: 8,
            cache: true,
            cache_path: None,
            audit_path: None,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let fail = |m: String| Err(GatewayError::Config(m));
        if self.max_in_flight < 1 {
            return fail("max_in_flight must be at least 1".into());
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return fail(format!("timeout {} must be positive", self.timeout_secs));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return fail(format!("temperature {} must be non-negative", self.temperature));
        }
        if self.base_url.is_empty() {
            return fail("base_url is empty".into());
        }
        if self.cache && self.cache_path.is_none() {
            return fail("caching is on but no cache_path is set".into());
        }
        Ok(())
    }

    /// Identity of the sampling setup, for cache file names and logs.
    pub fn describe(&self) -> String {
        format!("llm(model={}, temperature={})", self.model, self.temperature)
    }
}

/// One completion, as written to the audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_hash: String,
    pub sample_index: usize,
    pub response: String,
    pub latency_ms: u64,
    /// HTTP attempts made; 0 when served from the cache.
    pub attempts: usize,
    /// Unix time in milliseconds.
    pub timestamp: u64,
    pub cached: bool,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    response: String,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Cache key over (model, temperature, prompt hash, sample index).
pub fn cache_key(model: &str, temperature: f64, prompt_hash: &str, sample_index: usize) -> String {
    let material = format!("{model}\u{0}{temperature}\u{0}{prompt_hash}\u{0}{sample_index}");
    hex::encode(Sha256::digest(material.as_bytes()))
}

/// Delay before retry `attempt` (1-based): `base·2^(attempt−1)` plus jitter
/// in `[0, base·2^(attempt−1) / 2)`. The largest possible delay for one
/// attempt is below the smallest for the next, so delays never decrease.
pub fn backoff_delay<R: Rng + ?Sized>(base_ms: u64, attempt: usize, rng: &mut R) -> Duration {
    let exp = base_ms.saturating_mul(1u64 << (attempt.saturating_sub(1)).min(20));
    let jitter = if exp >= 2 { rng.gen_range(0..exp / 2) } else { 0 };
    Duration::from_millis(exp + jitter)
}

/// Counting semaphore bounding requests in flight across all callers.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// A completion with its retry count.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: usize,
    pub cached: bool,
}

pub struct Gateway {
    config: GatewayConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    limiter: Limiter,
    cache: Mutex<HashMap<String, String>>,
    cache_file: Mutex<Option<File>>,
    audit_file: Mutex<Option<File>>,
    network_calls: AtomicUsize,
}

fn open_append(path: &Path) -> std::io::Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    OpenOptions::new().create(true).append(true).open(path)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl Gateway {
    /// Builds a gateway, reading the API key from [`API_KEY_ENV`] and
    /// loading any existing cache file.
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: GatewayConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let mut cache = HashMap::new();
        let mut cache_file = None;
        if let (true, Some(path)) = (config.cache, &config.cache_path) {
            if path.exists() {
                for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                    let line = line?;
                    match serde_json::from_str::<CacheEntry>(&line) {
                        Ok(e) => {
                            cache.insert(e.key, e.response);
                        }
                        Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping unreadable cache line"),
                    }
                }
            }
            cache_file = Some(open_append(path)?);
        }
        let audit_file = config.audit_path.as_deref().map(open_append).transpose()?;
        Ok(Gateway {
            limiter: Limiter { free: Mutex::new(config.max_in_flight), cv: Condvar::new() },
            config,
            client,
            api_key,
            cache: Mutex::new(cache),
            cache_file: Mutex::new(cache_file),
            audit_file: Mutex::new(audit_file),
            network_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// HTTP requests issued so far (including failed attempts).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// One sampled completion of `prompt`, from the cache when possible.
    pub fn complete_one(&self, prompt: &str, sample_index: usize) -> Result<Completion, GatewayError> {
        if prompt.is_empty() {
            return Err(GatewayError::Config("prompt is empty".into()));
        }
        let hash = prompt_hash(prompt);
        let key = cache_key(&self.config.model, self.config.temperature, &hash, sample_index);
        let started = Instant::now();
        if self.config.cache {
            let hit = self.cache.lock().expect("cache poisoned").get(&key).cloned();
            if let Some(text) = hit {
                self.audit(&hash, sample_index, &text, started, 0, true)?;
                return Ok(Completion { text, attempts: 0, cached: true });
            }
        }
        let (text, attempts) = self.request_with_retries(prompt)?;
        if self.config.cache {
            let mut file = self.cache_file.lock().expect("cache file poisoned");
            if let Some(f) = file.as_mut() {
                let line = serde_json::to_string(&CacheEntry { key: key.clone(), response: text.clone() })
                    .expect("cache entry serializes");
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            self.cache.lock().expect("cache poisoned").insert(key, text.clone());
        }
        self.audit(&hash, sample_index, &text, started, attempts, false)?;
        Ok(Completion { text, attempts, cached: false })
    }

    /// `count` samples with indices `0..count`, at most `max_in_flight`
    /// concurrently. Slot `i` holds sample `i` whatever the completion
    /// order; failures stay per-slot.
    pub fn complete_batch(&self, prompt: &str, count: usize) -> Vec<Result<Completion, GatewayError>> {
        let indices: Vec<usize> = (0..count).collect();
        self.complete_indices(prompt, &indices)
    }

    fn complete_indices(&self, prompt: &str, indices: &[usize]) -> Vec<Result<Completion, GatewayError>> {
        if indices.len() <= 1 {
            return indices.iter().map(|&i| self.complete_one(prompt, i)).collect();
        }
        let workers = self.config.max_in_flight.min(indices.len());
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Completion, GatewayError>>>> =
            indices.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    if k >= indices.len() {
                        break;
                    }
                    let out = self.complete_one(prompt, indices[k]);
                    *slots[k].lock().expect("slot poisoned") = Some(out);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("slot poisoned").expect("every slot filled")).collect()
    }

    fn request_with_retries(&self, prompt: &str) -> Result<(String, usize), GatewayError> {
        let mut rng = rand::thread_rng();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = backoff_delay(self.config.backoff_base_ms, attempt, &mut rng);
                tracing::debug!(attempt, ?delay, "retrying completion");
                std::thread::sleep(delay);
            }
            match self.send(prompt) {
                Ok(text) => return Ok((text, attempt + 1)),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt = attempt + 1, error = %msg, "completion attempt failed");
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport { attempts: self.config.max_retries + 1, message: last })
    }

    fn send(&self, prompt: &str) -> Result<String, Attempt> {
        let _slot = self.limiter.acquire();
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::Rejected { status: status.as_u16(), body: text }));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Retry(format!("unreadable response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Attempt::Retry("response has no choices".into()))
    }

    fn audit(
        &self,
        prompt_hash: &str,
        sample_index: usize,
        response: &str,
        started: Instant,
        attempts: usize,
        cached: bool,
    ) -> Result<(), GatewayError> {
        let mut file = self.audit_file.lock().expect("audit poisoned");
        if let Some(f) = file.as_mut() {
            let record = CompletionRecord {
                prompt_hash: prompt_hash.to_string(),
                sample_index,
                response: response.to_string(),
                latency_ms: started.elapsed().as_millis() as u64,
                attempts,
                timestamp: now_ms(),
                cached,
            };
            writeln!(f, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        }
        Ok(())
    }
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl CompletionBackend for Gateway {
    fn complete(&self, prompt: &str, sample_index: usize) -> Result<String, BackendError> {
        self.complete_one(prompt, sample_index).map(|c| c.text).map_err(Into::into)
    }

    fn complete_many(&self, prompt: &str, sample_indices: &[usize]) -> Vec<Result<String, BackendError>> {
        self.complete_indices(prompt, sample_indices)
            .into_iter()
            .map(|r| r.map(|c| c.text).map_err(Into::into))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backoff_is_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for base in [1, 7, 100, 500] {
            let delays: Vec<Duration> = (1..=8).map(|a| backoff_delay(base, a, &mut rng)).collect();
            assert!(delays.windows(2).all(|w| w[0] <= w[1]), "{delays:?}");
            assert!(delays[0] >= Duration::from_millis(base));
        }
    }

    #[test]
    fn cache_key_separates_samples_and_settings() {
        let h = prompt_hash("p");
        let a = cache_key("m", 0.7, &h, 0);
        assert_eq!(a, cache_key("m", 0.7, &h, 0));
        assert_ne!(a, cache_key("m", 0.7, &h, 1));
        assert_ne!(a, cache_key("m", 0.0, &h, 0));
        assert_ne!(a, cache_key("other", 0.7, &h, 0));
    }

    #[test]
    fn config_validation() {
        let ok = GatewayConfig { cache: false, ..Default::default() };
        assert!(ok.validate().is_ok());
        assert!(GatewayConfig { max_in_flight: 0, ..ok.clone() }.validate().is_err());
        assert!(GatewayConfig { timeout_secs: 0.0, ..ok.clone() }.validate().is_err());
        assert!(GatewayConfig { cache: true, cache_path: None, ..ok }.validate().is_err());
    }
}
