//! Model backends: a chat-completion HTTP client and two deterministic mocks.
//!
//! [`ModelClient`] wraps a [`Backend`] with retry on transient failures,
//! an optional request-rate limit and an on-disk response cache, and runs
//! batches with a bounded number of requests in flight.
//!
//! Credentials are read from the environment variable named in
//! [`BackendSpec::api_key_env`] (default `LAYOUTQA_API_KEY`) when the client
//! is built. The value is never logged or serialised.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::FilledPrompt;

pub const DEFAULT_API_KEY_ENV: &str = "LAYOUTQA_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("backend failed after {attempts} attempt(s) (status {}): {message}", status.map_or("none".to_string(), |s| s.to_string()))]
    Backend {
        status: Option<u16>,
        message: String,
        attempts: u32,
    },
    #[error("response cache: {0}")]
    Cache(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    #[default]
    MockEcho,
    MockFixture,
}

/// Request/response shape of the HTTP endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatSchema {
    /// `choices[0].message.content`, bearer token.
    #[default]
    OpenAi,
    /// `content[].text`, `x-api-key` header.
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay after the given failed attempt (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(30);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// A canned fixture answer, or a simulated backend failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureEntry {
    Answer(String),
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub schema: ChatSchema,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub parallelism: usize,
    pub requests_per_second: Option<f64>,
    /// Fixture answers keyed by `question_id`, `question_id/page_id` or `*`.
    pub fixture: BTreeMap<String, FixtureEntry>,
    /// JSON file with more fixture entries; inline entries win.
    pub fixture_path: Option<PathBuf>,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            kind: BackendKind::MockEcho,
            endpoint: None,
            model_name: None,
            max_output_tokens: 128,
            temperature: 0.0,
            schema: ChatSchema::OpenAi,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            parallelism: 4,
            requests_per_second: None,
            fixture: BTreeMap::new(),
            fixture_path: None,
        }
    }
}

impl BackendSpec {
    pub fn mock_echo() -> Self {
        BackendSpec::default()
    }

    pub fn mock_fixture<K: Into<String>, V: Into<String>>(answers: impl IntoIterator<Item = (K, V)>) -> Self {
        BackendSpec {
            kind: BackendKind::MockFixture,
            fixture: answers
                .into_iter()
                .map(|(k, v)| (k.into(), FixtureEntry::Answer(v.into())))
                .collect(),
            ..Default::default()
        }
    }

    pub fn http_chat(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendSpec {
            kind: BackendKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model_name: Some(model_name.into()),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), ClientError> {
        if !(self.temperature >= 0.0) {
            return Err(ClientError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.parallelism == 0 {
            return Err(ClientError::Config("parallelism must be >= 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(ClientError::Config("retry.max_attempts must be >= 1".into()));
        }
        if let Some(rps) = self.requests_per_second {
            if !(rps > 0.0) {
                return Err(ClientError::Config("requests_per_second must be > 0".into()));
            }
        }
        if self.kind == BackendKind::HttpChat && self.endpoint.is_none() {
            return Err(ClientError::Config("http_chat requires an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    /// Served from the response cache without a backend call.
    pub cached: bool,
}

/// Failure of a single backend call.
#[derive(Debug, Clone)]
pub struct CallError {
    pub status: Option<u16>,
    pub message: String,
    /// Worth retrying (timeouts, 429, 5xx).
    pub transient: bool,
}

impl CallError {
    fn permanent(message: impl Into<String>) -> Self {
        CallError {
            status: None,
            message: message.into(),
            transient: false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn call(&self, prompt: &FilledPrompt) -> Result<String, CallError>;
}

/// Returns the prompt's last line.
pub struct EchoBackend;

impl Backend for EchoBackend {
    fn call(&self, prompt: &FilledPrompt) -> Result<String, CallError> {
        Ok(prompt.text.lines().last().unwrap_or("").to_string())
    }
}

pub struct FixtureBackend {
    entries: BTreeMap<String, FixtureEntry>,
}

impl FixtureBackend {
    pub fn new(entries: BTreeMap<String, FixtureEntry>) -> Self {
        FixtureBackend { entries }
    }

    fn lookup(&self, prompt: &FilledPrompt) -> Option<&FixtureEntry> {
        self.entries
            .get(&prompt.fixture_key())
            .or_else(|| self.entries.get(&prompt.question_id))
            .or_else(|| self.entries.get("*"))
    }
}

impl Backend for FixtureBackend {
    fn call(&self, prompt: &FilledPrompt) -> Result<String, CallError> {
        match self.lookup(prompt) {
            Some(FixtureEntry::Answer(a)) => Ok(a.clone()),
            Some(FixtureEntry::Error { error }) => Err(CallError::permanent(error.clone())),
            None => Err(CallError::permanent(format!("no fixture answer for `{}`", prompt.fixture_key()))),
        }
    }
}

struct Credential(String);

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(<redacted>)")
    }
}

#[derive(Debug)]
pub struct HttpChatBackend {
    http: reqwest::blocking::Client,
    endpoint: String,
    model_name: Option<String>,
    max_output_tokens: u32,
    temperature: f64,
    schema: ChatSchema,
    credential: Credential,
}

impl HttpChatBackend {
    fn from_spec(spec: &BackendSpec) -> Result<Self, ClientError> {
        let key = std::env::var(&spec.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ClientError::Config(format!("credential variable {} is not set", spec.api_key_env)))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(HttpChatBackend {
            http,
            endpoint: spec.endpoint.clone().unwrap_or_default(),
            model_name: spec.model_name.clone(),
            max_output_tokens: spec.max_output_tokens,
            temperature: spec.temperature,
            schema: spec.schema,
            credential: Credential(key),
        })
    }

    fn payload(&self, prompt: &str) -> Value {
        let mut body = json!({
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        });
        if let Some(m) = &self.model_name {
            body["model"] = json!(m);
        }
        body
    }
}

fn extract_text(schema: ChatSchema, body: &Value) -> Option<String> {
    match schema {
        ChatSchema::OpenAi => {
            let content = body.get("choices")?.get(0)?.get("message")?.get("content")?;
            Some(content.as_str().unwrap_or("").to_string())
        }
        ChatSchema::Anthropic => {
            let parts = body.get("content")?.as_array()?;
            Some(parts.iter().filter_map(|p| p.get("text")?.as_str()).collect())
        }
    }
}

impl Backend for HttpChatBackend {
    fn call(&self, prompt: &FilledPrompt) -> Result<String, CallError> {
        let req = self.http.post(&self.endpoint).json(&self.payload(&prompt.text));
        let req = match self.schema {
            ChatSchema::OpenAi => req.bearer_auth(&self.credential.0),
            ChatSchema::Anthropic => req
                .header("x-api-key", &self.credential.0)
                .header("anthropic-version", "2023-06-01"),
        };
        let resp = req.send().map_err(|e| CallError {
            status: None,
            transient: e.is_timeout() || e.is_connect() || e.is_request(),
            message: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            let code = status.as_u16();
            return Err(CallError {
                status: Some(code),
                transient: code == 429 || status.is_server_error(),
                message: format!("HTTP {status}"),
            });
        }
        let body: Value = resp.json().map_err(|e| CallError {
            status: Some(status.as_u16()),
            transient: e.is_timeout(),
            message: format!("unreadable response body: {e}"),
        })?;
        extract_text(self.schema, &body).ok_or_else(|| CallError {
            status: Some(status.as_u16()),
            transient: false,
            message: "response has no completion text".into(),
        })
    }
}

/// Spaces request starts at least `1 / rps` apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(rps: Option<f64>) -> Self {
        RateLimiter {
            interval: rps.map(|r| Duration::from_secs_f64(1.0 / r)),
            next: Mutex::new(None),
        }
    }

    fn wait(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let slot = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

pub fn sha256_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0u8]);
        }
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// One JSON file per response, named by hash of model name and prompt text.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CachedResponse {
    text: String,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(model_name: Option<&str>, prompt: &str) -> String {
        sha256_hex(&[model_name.unwrap_or(""), prompt])
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let raw = fs::read(self.path(key)).ok()?;
        serde_json::from_slice::<CachedResponse>(&raw).ok().map(|c| c.text)
    }

    pub fn put(&self, key: &str, text: &str) -> io::Result<()> {
        let tmp = self.dir.join(format!(".{key}.{:?}.tmp", thread::current().id()));
        fs::write(&tmp, serde_json::to_vec(&CachedResponse { text: text.to_string() })?)?;
        fs::rename(tmp, self.path(key))
    }
}

pub struct ModelClient {
    spec: BackendSpec,
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    limiter: RateLimiter,
    backend_calls: AtomicUsize,
}

impl fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelClient")
            .field("kind", &self.spec.kind)
            .field("model_name", &self.spec.model_name)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

fn load_fixture(spec: &BackendSpec) -> Result<BTreeMap<String, FixtureEntry>, ClientError> {
    let mut entries = BTreeMap::new();
    if let Some(path) = &spec.fixture_path {
        let raw = fs::read(path).map_err(|e| ClientError::Config(format!("fixture {}: {e}", path.display())))?;
        entries = serde_json::from_slice(&raw)
            .map_err(|e| ClientError::Config(format!("fixture {}: {e}", path.display())))?;
    }
    entries.extend(spec.fixture.clone());
    Ok(entries)
}

impl ModelClient {
    /// Validate the spec and build its backend. Missing credentials fail
    /// here, before any network traffic.
    pub fn new(spec: BackendSpec) -> Result<Self, ClientError> {
        spec.validate()?;
        let backend: Box<dyn Backend> = match spec.kind {
            BackendKind::MockEcho => Box::new(EchoBackend),
            BackendKind::MockFixture => Box::new(FixtureBackend::new(load_fixture(&spec)?)),
            BackendKind::HttpChat => Box::new(HttpChatBackend::from_spec(&spec)?),
        };
        Ok(Self::with_backend(spec, backend))
    }

    /// Use a caller-supplied backend; `spec` still provides retry, rate and
    /// parallelism settings.
    pub fn with_backend(spec: BackendSpec, backend: Box<dyn Backend>) -> Self {
        ModelClient {
            limiter: RateLimiter::new(spec.requests_per_second),
            spec,
            backend,
            cache: None,
            backend_calls: AtomicUsize::new(0),
        }
    }

    /// Cache responses under `dir`. Only HTTP responses are cached; mock
    /// answers depend on the question id rather than the prompt text.
    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        if self.spec.kind == BackendKind::HttpChat {
            self.cache = Some(ResponseCache::open(dir)?);
        }
        Ok(self)
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    /// Backend invocations so far, retries included, cache hits excluded.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, prompt: &FilledPrompt) -> Result<Completion, ClientError> {
        if prompt.text.is_empty() {
            return Err(ClientError::Config("prompt is empty".into()));
        }
        let started = Instant::now();
        let key = self
            .cache
            .as_ref()
            .map(|_| ResponseCache::key(self.spec.model_name.as_deref(), &prompt.text));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(text) = cache.get(key) {
                debug!("cache hit for {}", prompt.fixture_key());
                return Ok(Completion {
                    text,
                    latency_ms: started.elapsed().as_millis() as u64,
                    attempt_count: 1,
                    cached: true,
                });
            }
        }

        let policy = &self.spec.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.wait();
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.call(prompt) {
                Ok(text) => {
                    if let (Some(cache), Some(key)) = (&self.cache, &key) {
                        cache.put(key, &text)?;
                    }
                    return Ok(Completion {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                        cached: false,
                    });
                }
                Err(e) if e.transient && attempt < policy.max_attempts => {
                    let delay = policy.backoff(attempt);
                    warn!(
                        "{}: attempt {attempt} failed ({}), retrying in {delay:?}",
                        prompt.fixture_key(),
                        e.message
                    );
                    thread::sleep(delay);
                }
                Err(e) => {
                    return Err(ClientError::Backend {
                        status: e.status,
                        message: e.message,
                        attempts: attempt,
                    })
                }
            }
        }
    }

    /// Complete every prompt with at most `parallelism` calls in flight.
    /// Results line up with the input; failures are returned in place.
    pub fn complete_batch(&self, prompts: &[FilledPrompt]) -> Vec<Result<Completion, ClientError>> {
        let workers = self.spec.parallelism.min(prompts.len());
        if workers <= 1 {
            return prompts.iter().map(|p| self.complete(p)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Completion, ClientError>>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(p) = prompts.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.complete(p));
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot filled"))
            .collect()
    }
}

/// One-shot completion with a freshly built client.
pub fn complete(backend: &BackendSpec, prompt: &FilledPrompt) -> Result<Completion, ClientError> {
    ModelClient::new(backend.clone())?.complete(prompt)
}

/// Line of the JSONL run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_id: Option<String>,
    pub prompt_hash: String,
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub attempts: u32,
    pub cached: bool,
}

impl RunLogEntry {
    pub fn new(prompt: &FilledPrompt, result: &Result<Completion, ClientError>) -> Self {
        let (completion, error, latency_ms, attempts, cached) = match result {
            Ok(c) => (Some(c.text.clone()), None, c.latency_ms, c.attempt_count, c.cached),
            Err(e) => {
                let attempts = match e {
                    ClientError::Backend { attempts, .. } => *attempts,
                    _ => 0,
                };
                (None, Some(e.to_string()), 0, attempts, false)
            }
        };
        RunLogEntry {
            question_id: prompt.question_id.clone(),
            page_id: prompt.page_id.clone(),
            prompt_hash: sha256_hex(&[&prompt.text]),
            completion,
            error,
            latency_ms,
            attempts,
            cached,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{fill_template, PromptKind, PromptVariant, TaskKind};

    fn prompt(qid: &str) -> FilledPrompt {
        fill_template(TaskKind::DocVqa, PromptVariant::FULL, "doc", "Q?", qid).unwrap()
    }

    #[test]
    fn echo_returns_last_line() {
        let c = complete(&BackendSpec::mock_echo(), &prompt("q1")).unwrap();
        assert_eq!(c.text, "Answer:");
        assert_eq!(c.attempt_count, 1);
    }

    #[test]
    fn fixture_by_question_id() {
        let spec = BackendSpec::mock_fixture([("q1", "1988")]);
        assert_eq!(complete(&spec, &prompt("q1")).unwrap().text, "1988");
        assert!(matches!(
            complete(&spec, &prompt("q2")),
            Err(ClientError::Backend { attempts: 1, .. })
        ));
    }

    #[test]
    fn fixture_page_key_and_wildcard() {
        let spec = BackendSpec::mock_fixture([("q1/p2", "page two"), ("q1", "any"), ("*", "default")]);
        let client = ModelClient::new(spec).unwrap();
        assert_eq!(client.complete(&prompt("q1").with_page("p2")).unwrap().text, "page two");
        assert_eq!(client.complete(&prompt("q1").with_page("p1")).unwrap().text, "any");
        assert_eq!(client.complete(&prompt("zz")).unwrap().text, "default");
    }

    #[test]
    fn batch_preserves_order_and_isolates_failures() {
        let mut spec = BackendSpec::mock_fixture((0..5).map(|i| (format!("q{i}"), format!("a{i}"))));
        spec.fixture.insert("q2".into(), FixtureEntry::Error { error: "poisoned".into() });
        let client = ModelClient::new(spec).unwrap();
        let prompts: Vec<_> = (0..5).map(|i| prompt(&format!("q{i}"))).collect();
        let out = client.complete_batch(&prompts);
        assert_eq!(out.len(), 5);
        for (i, r) in out.iter().enumerate() {
            if i == 2 {
                assert!(r.as_ref().unwrap_err().to_string().contains("poisoned"));
            } else {
                assert_eq!(r.as_ref().unwrap().text, format!("a{i}"));
            }
        }
    }

    #[test]
    fn echo_batch_in_order() {
        let client = ModelClient::new(BackendSpec::mock_echo()).unwrap();
        let prompts: Vec<_> = ["x", "y", "z"]
            .iter()
            .map(|l| FilledPrompt::raw(format!("line\n{l}"), PromptKind::QuestionGeneration, *l))
            .collect();
        let texts: Vec<_> = client
            .complete_batch(&prompts)
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        assert_eq!(texts, ["x", "y", "z"]);
    }

    #[test]
    fn http_without_credential_is_config_error() {
        let mut spec = BackendSpec::http_chat("http://127.0.0.1:9/v1/chat/completions", "m");
        spec.api_key_env = "LAYOUTQA_TEST_UNSET_KEY_VARIABLE".into();
        assert!(matches!(ModelClient::new(spec), Err(ClientError::Config(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            BackendSpec {
                temperature: -0.1,
                ..Default::default()
            },
            BackendSpec {
                parallelism: 0,
                ..Default::default()
            },
            BackendSpec {
                kind: BackendKind::HttpChat,
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(matches!(ModelClient::new(spec), Err(ClientError::Config(_))));
        }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
        };
        let ms: Vec<u128> = (1..=6).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(ms, [100, 200, 400, 800, 1000, 1000]);
    }

    #[test]
    fn extract_text_schemas() {
        let oa = json!({"choices": [{"message": {"role": "assistant", "content": "Bob"}}]});
        assert_eq!(extract_text(ChatSchema::OpenAi, &oa).as_deref(), Some("Bob"));
        let null = json!({"choices": [{"message": {"content": null}}]});
        assert_eq!(extract_text(ChatSchema::OpenAi, &null).as_deref(), Some(""));
        let an = json!({"content": [{"type": "text", "text": "Al"}, {"type": "text", "text": "ice"}]});
        assert_eq!(extract_text(ChatSchema::Anthropic, &an).as_deref(), Some("Alice"));
        assert_eq!(extract_text(ChatSchema::OpenAi, &json!({})), None);
    }

    #[test]
    fn credential_debug_is_redacted() {
        let c = Credential("sk-secret".into());
        assert!(!format!("{c:?}").contains("sk-secret"));
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let k = ResponseCache::key(Some("m"), "prompt");
        assert_ne!(k, ResponseCache::key(Some("m2"), "prompt"));
        assert_eq!(cache.get(&k), None);
        cache.put(&k, "answer").unwrap();
        assert_eq!(cache.get(&k).as_deref(), Some("answer"));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(Some(100.0));
        let t = Instant::now();
        for _ in 0..5 {
            limiter.wait();
        }
        assert!(t.elapsed() >= Duration::from_millis(38));
    }
}
