//! Chat-completion and embedding client with record/replay.
//!
//! Four modes:
//!
//! * `live`   - HTTPS calls to an OpenAI-compatible endpoint.
//! * `record` - live, and every response is persisted under the hash of its
//!   request. A request already present in the store is served from it, so
//!   resumed runs do not pay for the same call twice.
//! * `replay` - responses come only from the store; a miss is an error.
//! * `stub`   - canned offline responses and hash-derived unit embeddings.
//!
//! Replay and stub never touch the transport.

mod fixtures;
mod transport;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixtures::{fixture_key, Fixture, FixtureStore};
pub use transport::{HttpResponse, Sleeper, ThreadSleeper, Transport, TransportError, UreqTransport};

use crate::protocol;
use crate::rng::{standard_normal, GameRng};

/// Total attempts per live call.
pub const MAX_ATTEMPTS: usize = 3;
/// Sleep before attempt 2 and attempt 3.
pub const BACKOFF: [Duration; 2] = [Duration::from_secs(1), Duration::from_secs(4)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
    Stub,
}

impl GatewayMode {
    pub fn needs_api_key(self) -> bool {
        matches!(self, GatewayMode::Live | GatewayMode::Record)
    }
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "stub" => Ok(Self::Stub),
            other => Err(format!("unknown gateway mode {other:?} (live|record|replay|stub)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("messages must be non-empty".into())),
            Some(m) if m.role != Role::System => Err(GatewayError::InvalidRequest(
                "first message must have the system role".into(),
            )),
            Some(_) => Ok(()),
        }
    }

    fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model: String,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Offline completion behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum StubCompletion {
    /// Picks one of the tags listed on the prompt's `Commands available:`
    /// line, chosen by request hash; echoes the last user message when the
    /// prompt has no such line.
    Player,
    /// Returns the last user message verbatim.
    Echo,
    Canned(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubConfig {
    pub completion: StubCompletion,
    pub embedding_dim: usize,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self { completion: StubCompletion::Player, embedding_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub temperature: f64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Fixture directory; relative paths resolve against the run directory.
    pub fixture_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    pub stub: StubConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Stub,
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-4-0125-preview".into(),
            embedding_model: "text-embedding-3-small".into(),
            temperature: 0.0,
            api_key_env: "OPENAI_API_KEY".into(),
            fixture_dir: None,
            timeout_secs: 120,
            stub: StubConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("environment variable {0} is not set; it must hold the API key for live/record mode")]
    MissingApiKey(String),
    #[error("replay fixture missing for request hash {0}")]
    FixtureMissing(String),
    #[error("{0} mode requires a fixture directory")]
    NoFixtureStore(&'static str),
    #[error("service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("could not decode service response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture store: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    /// The service stayed unavailable or answered garbage. Callers may
    /// degrade instead of aborting; every other error needs a fix from
    /// the user.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::RetriesExhausted { .. } | GatewayError::Decode(_))
    }
}

/// One live attempt, or one backoff sleep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub kind: String,
    pub attempt: usize,
    pub outcome: String,
    pub latency_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backoff_ms: Option<u64>,
}

pub struct Gateway {
    config: GatewayConfig,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    fixtures: Option<FixtureStore>,
    calls: Mutex<Vec<CallRecord>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.config.mode)
            .field("fixtures", &self.fixtures.as_ref().and_then(|s| s.dir()))
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds a gateway from config, reading the API key from the
    /// environment when the mode needs one.
    pub fn from_config(config: GatewayConfig) -> Result<Self, GatewayError> {
        let api_key = if config.mode.needs_api_key() {
            match std::env::var(&config.api_key_env) {
                Ok(key) if !key.trim().is_empty() => Some(key),
                _ => return Err(GatewayError::MissingApiKey(config.api_key_env.clone())),
            }
        } else {
            None
        };
        let transport = Arc::new(UreqTransport::new(Duration::from_secs(config.timeout_secs)));
        let fixtures = config.fixture_dir.clone().map(FixtureStore::at);
        Self::with_parts(config, api_key, transport, Arc::new(ThreadSleeper), fixtures)
    }

    pub fn with_parts(
        config: GatewayConfig,
        api_key: Option<String>,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
        fixtures: Option<FixtureStore>,
    ) -> Result<Self, GatewayError> {
        match config.mode {
            GatewayMode::Replay if fixtures.is_none() => {
                return Err(GatewayError::NoFixtureStore("replay"))
            }
            GatewayMode::Record if fixtures.is_none() => {
                return Err(GatewayError::NoFixtureStore("record"))
            }
            _ => {}
        }
        Ok(Self {
            config,
            api_key,
            transport,
            sleeper,
            fixtures,
            calls: Mutex::default(),
        })
    }

    /// Offline stub gateway with default settings.
    pub fn stub() -> Self {
        Self::stub_with(StubConfig::default())
    }

    pub fn stub_with(stub: StubConfig) -> Self {
        let config = GatewayConfig { mode: GatewayMode::Stub, stub, ..GatewayConfig::default() };
        Self::with_parts(config, None, Arc::new(NoNetwork), Arc::new(ThreadSleeper), None)
            .expect("stub needs no fixtures")
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn mode(&self) -> GatewayMode {
        self.config.mode
    }

    pub fn fixtures(&self) -> Option<&FixtureStore> {
        self.fixtures.as_ref()
    }

    /// Live attempts and backoff sleeps so far.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    /// Request carrying the configured chat model and temperature.
    pub fn request(&self, messages: Vec<Message>) -> ModelRequest {
        ModelRequest {
            model: self.config.chat_model.clone(),
            temperature: self.config.temperature,
            messages,
        }
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let key = fixture_key("chat", request);
        let fetch = || {
            let body = serde_json::to_value(request).expect("requests serialize");
            let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
            let (value, record) = self.post_with_retry("chat", &url, &body)?;
            let text = value
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| GatewayError::Decode("missing choices[0].message.content".into()))?
                .to_string();
            self.push_usage(record, &value);
            Ok(Value::String(text))
        };
        let value = match self.config.mode {
            GatewayMode::Stub => return Ok(stub_completion(&self.config.stub.completion, request)),
            _ => self.resolve("chat", &key, request, fetch)?,
        };
        value
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Decode(format!("fixture {key} is not a string")))
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let model = self.config.embedding_model.clone();
        if self.config.mode == GatewayMode::Stub {
            return Ok(stub_embedding(text, &model, self.config.stub.embedding_dim));
        }
        let request = json!({ "model": model, "input": text });
        let key = fixture_key("embed", &request);
        let fetch = || {
            let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
            let (value, record) = self.post_with_retry("embed", &url, &request)?;
            let vector = value
                .pointer("/data/0/embedding")
                .cloned()
                .ok_or_else(|| GatewayError::Decode("missing data[0].embedding".into()))?;
            self.push_usage(record, &value);
            Ok(vector)
        };
        let value = self.resolve("embed", &key, &request, fetch)?;
        let values: Vec<f64> = serde_json::from_value(value)
            .map_err(|e| GatewayError::Decode(format!("embedding fixture {key}: {e}")))?;
        Ok(EmbeddingVector { values, model })
    }

    fn resolve<R: Serialize>(
        &self,
        kind: &str,
        key: &str,
        request: &R,
        fetch: impl FnOnce() -> Result<Value, GatewayError>,
    ) -> Result<Value, GatewayError> {
        match self.config.mode {
            GatewayMode::Live => fetch(),
            GatewayMode::Replay => {
                let store = self.fixtures.as_ref().ok_or(GatewayError::NoFixtureStore("replay"))?;
                store
                    .get(key)?
                    .map(|f| f.response)
                    .ok_or_else(|| GatewayError::FixtureMissing(key.to_string()))
            }
            GatewayMode::Record => {
                let store = self.fixtures.as_ref().ok_or(GatewayError::NoFixtureStore("record"))?;
                if let Some(hit) = store.get(key)? {
                    return Ok(hit.response);
                }
                let value = fetch()?;
                let request = serde_json::to_value(request).expect("requests serialize");
                store.put(key, kind, request, value.clone())?;
                Ok(value)
            }
            GatewayMode::Stub => unreachable!("stub handled by caller"),
        }
    }

    fn post_with_retry(
        &self,
        kind: &str,
        url: &str,
        body: &Value,
    ) -> Result<(Value, usize), GatewayError> {
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            if attempt > 1 {
                let pause = BACKOFF[attempt - 2];
                self.log_call(CallRecord {
                    kind: kind.into(),
                    attempt,
                    outcome: "backoff".into(),
                    latency_ms: 0,
                    prompt_tokens: None,
                    completion_tokens: None,
                    backoff_ms: Some(pause.as_millis() as u64),
                });
                tracing::warn!(kind, attempt, backoff_ms = pause.as_millis() as u64, "retrying");
                self.sleeper.sleep(pause);
            }
            let started = Instant::now();
            let result = self.transport.post_json(url, self.api_key.as_deref(), body);
            let latency_ms = started.elapsed().as_millis() as u64;
            let outcome = match &result {
                Ok(r) => format!("http {}", r.status),
                Err(e) => e.to_string(),
            };
            let index = self.log_call(CallRecord {
                kind: kind.into(),
                attempt,
                outcome,
                latency_ms,
                prompt_tokens: None,
                completion_tokens: None,
                backoff_ms: None,
            });
            match result {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let value: Value = serde_json::from_str(&resp.body)
                        .map_err(|e| GatewayError::Decode(e.to_string()))?;
                    return Ok((value, index));
                }
                Ok(resp) if resp.status >= 500 || resp.status == 429 => {
                    last = format!("HTTP {}", resp.status);
                }
                Ok(resp) => {
                    return Err(GatewayError::Status { status: resp.status, body: resp.body });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(GatewayError::RetriesExhausted { attempts: MAX_ATTEMPTS, last })
    }

    fn log_call(&self, record: CallRecord) -> usize {
        let mut calls = self.calls.lock().unwrap();
        calls.push(record);
        calls.len() - 1
    }

    fn push_usage(&self, index: usize, response: &Value) {
        let usage = |field: &str| response.pointer(&format!("/usage/{field}")).and_then(Value::as_u64);
        let mut calls = self.calls.lock().unwrap();
        if let Some(record) = calls.get_mut(index) {
            record.prompt_tokens = usage("prompt_tokens");
            record.completion_tokens = usage("completion_tokens");
        }
    }
}

/// Transport that refuses to run; installed in stub gateways.
struct NoNetwork;

impl Transport for NoNetwork {
    fn post_json(&self, url: &str, _: Option<&str>, _: &Value) -> Result<HttpResponse, TransportError> {
        Err(TransportError(format!("network disabled (attempted {url})")))
    }
}

fn stub_completion(mode: &StubCompletion, request: &ModelRequest) -> String {
    match mode {
        StubCompletion::Canned(text) => text.clone(),
        StubCompletion::Echo => request.last_user().to_string(),
        StubCompletion::Player => {
            let prompt = request.last_user();
            let Some(line) = prompt
                .lines()
                .rev()
                .find_map(|l| l.trim().strip_prefix(protocol::COMMANDS_PREFIX))
            else {
                return prompt.to_string();
            };
            let options: Vec<&str> = line.split(protocol::COMMANDS_SEPARATOR).map(str::trim).collect();
            let digest = Sha256::digest(serde_json::to_vec(request).expect("requests serialize"));
            let pick = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize % options.len();
            format!("(stub) {}", options[pick])
        }
    }
}

/// Deterministic unit vector derived from the SHA-256 of model and text.
pub fn stub_embedding(text: &str, model: &str, dim: usize) -> EmbeddingVector {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update(b"\n");
    hasher.update(text.as_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    let mut rng = GameRng::from_seed(seed);
    let mut values: Vec<f64> = (0..dim.max(1)).map(|_| standard_normal(&mut rng)).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut values {
        *v /= norm;
    }
    EmbeddingVector { values, model: model.to_string() }
}
