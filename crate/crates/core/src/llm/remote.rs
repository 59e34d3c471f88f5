//! OpenAI-compatible chat-completion transport.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::ratelimit::RateLimiter;
use super::{BackendConfig, LlmError, RawResponse};

const MAX_BACKOFF: Duration = Duration::from_secs(60);

#[derive(Debug)]
pub struct RemoteBackend {
    client: Client,
    endpoint: String,
    api_key: String,
    model_id: String,
    temperature: f64,
    max_retries: u32,
    backoff_base: Duration,
    limiter: RateLimiter,
}

enum Failure {
    RateLimited(Option<Duration>),
    Transient(String),
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

impl RemoteBackend {
    pub fn new(cfg: &BackendConfig, api_key: String) -> Result<Self, LlmError> {
        let endpoint = cfg
            .endpoint_url
            .clone()
            .ok_or_else(|| LlmError::Config("remote backend needs an endpoint url".into()))?;
        if api_key.trim().is_empty() {
            return Err(LlmError::Auth("API key is empty".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_seconds))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(RemoteBackend {
            client,
            endpoint,
            api_key,
            model_id: cfg.model_id.clone(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            backoff_base: Duration::from_millis(cfg.backoff_base_ms),
            limiter: RateLimiter::per_minute(cfg.requests_per_minute),
        })
    }

    fn attempt(&self, body: &Value) -> Result<Result<String, Failure>, LlmError> {
        self.limiter.acquire();
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send();
        let resp = match resp {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Err(Failure::Transient(e.to_string())))
            }
            Err(e) => return Err(LlmError::Transport(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            let text = resp.text().unwrap_or_default();
            return Err(LlmError::Auth(format!("{status}: {text}")));
        }
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Ok(Err(Failure::RateLimited(retry_after(resp.headers()))));
        }
        if status.is_server_error() {
            return Ok(Err(Failure::Transient(format!("server returned {status}"))));
        }
        let text = resp
            .text()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Transport(format!("{status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| LlmError::Transport(format!("malformed response body: {e}")))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                LlmError::Transport("response has no choices[0].message.content".into())
            })?;
        Ok(Ok(content.to_owned()))
    }

    /// Sends `prompt` as the only user message, retrying on 429, 5xx and
    /// network failures with exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<RawResponse, LlmError> {
        let body = json!({
            "model": self.model_id,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut last = Failure::Transient("no attempt made".into());
        for attempt in 0..=self.max_retries {
            match self.attempt(&body)? {
                Ok(text) => {
                    return Ok(RawResponse {
                        text,
                        cached: false,
                        attempt_count: attempt + 1,
                    })
                }
                Err(f) => {
                    if attempt < self.max_retries {
                        let mut wait = self.backoff_base.saturating_mul(1 << attempt.min(16));
                        if let Failure::RateLimited(Some(hint)) = f {
                            wait = wait.max(hint);
                        }
                        thread::sleep(wait.min(MAX_BACKOFF));
                    }
                    last = f;
                }
            }
        }
        let attempts = self.max_retries + 1;
        Err(match last {
            Failure::RateLimited(_) => LlmError::RateLimitExhausted { attempts },
            Failure::Transient(msg) => {
                LlmError::Transport(format!("{msg} (after {attempts} attempts)"))
            }
        })
    }
}
