//! Chat-completion backends behind one interface: a remote HTTP endpoint, an
//! echo mock that answers with ground truth, a fixture mock with canned
//! answers, and a replay backend that only serves from cache.

mod cache;
mod ratelimit;
mod remote;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{cache_key, CacheStats, ResponseCache};
pub use ratelimit::RateLimiter;
pub use remote::RemoteBackend;

use crate::dataset::Dataset;
use crate::model::Template;
use crate::prompt::PromptSpec;

pub const API_KEY_VAR: &str = "LOGBENCH_API_KEY";
pub const FALLBACK_API_KEY_VAR: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited on all {attempts} attempts")]
    RateLimitExhausted { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no fixture response for prompt hash {0}")]
    FixtureMiss(String),
    #[error("echo backend has no ground truth for log `{0}`")]
    EchoMiss(String),
    #[error("replay cache has no response for prompt hash {0}")]
    ReplayMiss(String),
    #[error("cache {path}: line {line}: {message}")]
    CacheIo {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    MockEcho,
    MockFixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    pub endpoint_url: Option<String>,
    pub temperature: f64,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    pub timeout_seconds: f64,
    pub backoff_base_ms: u64,
    /// Maximum concurrent requests per dataset.
    pub max_in_flight: usize,
    /// Canned responses for `mock_fixture`.
    pub fixture_path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::MockEcho,
            model_id: "gpt-3.5-turbo-0301".to_owned(),
            endpoint_url: Some("https://api.openai.com/v1/chat/completions".to_owned()),
            temperature: 0.0,
            max_retries: 3,
            requests_per_minute: 60,
            timeout_seconds: 60.0,
            backoff_base_ms: 1000,
            max_in_flight: 4,
            fixture_path: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::Config(m));
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be positive".into());
        }
        if self.timeout_seconds.is_nan() || self.timeout_seconds <= 0.0 {
            return bad("timeout_seconds must be positive".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be positive".into());
        }
        if self.model_id.trim().is_empty() {
            return bad("model id is empty".into());
        }
        match self.kind {
            BackendKind::Remote if self.endpoint_url.is_none() => {
                bad("remote backend needs an endpoint url".into())
            }
            BackendKind::MockFixture if self.fixture_path.is_none() => {
                bad("mock_fixture backend needs a fixture file".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawResponse {
    pub text: String,
    pub cached: bool,
    pub attempt_count: u32,
}

/// Hex SHA-256 of the rendered prompt text.
pub fn prompt_hash(rendered: &str) -> String {
    cache::hex(&Sha256::digest(rendered.as_bytes()))
}

/// Reads the API key from `LOGBENCH_API_KEY`, then `OPENAI_API_KEY`.
pub fn api_key_from_env() -> Result<String, LlmError> {
    [API_KEY_VAR, FALLBACK_API_KEY_VAR]
        .iter()
        .find_map(|v| std::env::var(v).ok().filter(|k| !k.trim().is_empty()))
        .ok_or_else(|| {
            LlmError::Auth(format!(
                "no API key: set {API_KEY_VAR} (or {FALLBACK_API_KEY_VAR})"
            ))
        })
}

/// Ground-truth lookup for the echo backend, keyed by message content.
/// When the same content carries several templates the first one wins.
#[derive(Clone, Debug, Default)]
pub struct EchoTable {
    truth: HashMap<String, Template>,
}

impl EchoTable {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut truth = HashMap::with_capacity(ds.len());
        for r in ds.records() {
            truth
                .entry(r.content.clone())
                .or_insert_with(|| r.truth_template.clone());
        }
        EchoTable { truth }
    }
}

/// Canned responses keyed by prompt hash. File format: one JSON object
/// mapping hex SHA-256 of the rendered prompt to the response text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureTable {
    pub responses: HashMap<String, String>,
}

impl FixtureTable {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| {
            LlmError::Config(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("bad fixture {}: {e}", path.display())))
    }

    pub fn insert(&mut self, rendered_prompt: &str, response: &str) {
        self.responses
            .insert(prompt_hash(rendered_prompt), response.to_owned());
    }
}

#[derive(Debug)]
enum Backend {
    Remote(RemoteBackend),
    Echo(EchoTable),
    Fixture(FixtureTable),
    /// Serves nothing; every uncached prompt is an error.
    Replay,
}

/// A configured backend plus a count of calls that reached it.
#[derive(Debug)]
pub struct LlmClient {
    model_id: String,
    backend: Backend,
    calls: AtomicUsize,
}

impl LlmClient {
    fn with_backend(model_id: &str, backend: Backend) -> Self {
        LlmClient {
            model_id: model_id.to_owned(),
            backend,
            calls: AtomicUsize::new(0),
        }
    }

    /// Builds the backend described by `cfg`. Remote backends read the API
    /// key from the environment and fail here, before any request, without one.
    /// Echo backends need the dataset and are built with [`LlmClient::echo`].
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        match cfg.kind {
            BackendKind::Remote => Self::remote(cfg, api_key_from_env()?),
            BackendKind::MockFixture => {
                let path = cfg.fixture_path.as_deref().expect("validated");
                Ok(Self::fixture(&cfg.model_id, FixtureTable::load(path)?))
            }
            BackendKind::MockEcho => {
                Err(LlmError::Config("echo backend is built per dataset".into()))
            }
        }
    }

    pub fn remote(cfg: &BackendConfig, api_key: String) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(Self::with_backend(
            &cfg.model_id,
            Backend::Remote(RemoteBackend::new(cfg, api_key)?),
        ))
    }

    pub fn echo(model_id: &str, table: EchoTable) -> Self {
        Self::with_backend(model_id, Backend::Echo(table))
    }

    pub fn fixture(model_id: &str, table: FixtureTable) -> Self {
        Self::with_backend(model_id, Backend::Fixture(table))
    }

    pub fn replay(model_id: &str) -> Self {
        Self::with_backend(model_id, Backend::Replay)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Number of prompts that reached the backend (cache hits excluded).
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// One prompt, one response. Refusals come back as ordinary text.
    pub fn complete(&self, prompt: &PromptSpec) -> Result<RawResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let canned = |text: String| RawResponse {
            text,
            cached: false,
            attempt_count: 1,
        };
        match &self.backend {
            Backend::Remote(remote) => remote.complete(&prompt.rendered),
            Backend::Echo(table) => table
                .truth
                .get(&prompt.target_log)
                .map(|t| canned(format!("`{}'", t.raw())))
                .ok_or_else(|| LlmError::EchoMiss(prompt.target_log.clone())),
            Backend::Fixture(table) => {
                let hash = prompt_hash(&prompt.rendered);
                table
                    .responses
                    .get(&hash)
                    .cloned()
                    .map(canned)
                    .ok_or(LlmError::FixtureMiss(hash))
            }
            Backend::Replay => Err(LlmError::ReplayMiss(prompt_hash(&prompt.rendered))),
        }
    }
}

/// Serves from `cache` when possible; otherwise asks the backend and records
/// the answer before returning it.
pub fn cached_complete(
    prompt: &PromptSpec,
    client: &LlmClient,
    cache: &ResponseCache,
) -> Result<RawResponse, LlmError> {
    let hash = prompt_hash(&prompt.rendered);
    if let Some(text) = cache.get(client.model_id(), &hash) {
        return Ok(RawResponse {
            text,
            cached: true,
            attempt_count: 1,
        });
    }
    let resp = client.complete(prompt)?;
    cache.put(client.model_id(), &hash, &resp.text)?;
    Ok(resp)
}
