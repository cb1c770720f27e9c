//! Blocking HTTP client for an OpenAI-compatible chat-completions endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde_json::Value;

use super::{AttemptFailure, CompletionBackend, CompletionRequest, RetryPolicy, SampleContext};
use crate::domain::BackendDescriptor;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Maximum concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore capping in-flight requests.
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(permits: usize) -> Self {
        InFlight {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *available += 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: Client,
    in_flight: InFlight,
}

impl HttpBackend {
    /// Resolves the credential through `lookup` (normally the process
    /// environment). A missing credential surfaces on the first call.
    pub fn new(config: HttpConfig, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, AttemptFailure> {
        let api_key = lookup(&config.api_key_env).filter(|k| !k.is_empty());
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| AttemptFailure::Transport(e.to_string()))?;
        let in_flight = InFlight::new(config.max_in_flight);
        Ok(HttpBackend {
            config,
            api_key,
            client,
            in_flight,
        })
    }

    pub fn has_credential(&self) -> bool {
        self.api_key.is_some()
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    let value = headers.get(RETRY_AFTER)?.to_str().ok()?;
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

/// Pull `choices[0].message.content` out of a chat-completion response.
pub fn extract_content(body: &str) -> Result<String, AttemptFailure> {
    let envelope: Value = serde_json::from_str(body)
        .map_err(|e| AttemptFailure::InvalidEnvelope(format!("response is not JSON: {e}")))?;
    let message = envelope
        .pointer("/choices/0/message")
        .ok_or_else(|| AttemptFailure::InvalidEnvelope("response has no choices[0].message".into()))?;
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Err(AttemptFailure::Refusal(refusal.to_string()));
    }
    message
        .get("content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AttemptFailure::InvalidEnvelope("message content is not a string".into()))
}

fn truncate(mut body: String, max: usize) -> String {
    if body.len() > max {
        let mut end = max;
        while !body.is_char_boundary(end) {
            end -= 1;
        }
        body.truncate(end);
    }
    body
}

impl CompletionBackend for HttpBackend {
    fn attempt(&self, request: &CompletionRequest, _ctx: &SampleContext<'_>) -> Result<String, AttemptFailure> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| AttemptFailure::CredentialMissing(self.config.api_key_env.clone()))?;
        let _permit = self.in_flight.acquire();
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(request.to_wire_json())
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    AttemptFailure::Timeout
                } else {
                    AttemptFailure::Transport(e.to_string())
                }
            })?;
        let status = response.status();
        let after = retry_after(response.headers());
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                AttemptFailure::Timeout
            } else {
                AttemptFailure::Transport(e.to_string())
            }
        })?;
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(AttemptFailure::RateLimited { retry_after: after });
        }
        if !status.is_success() {
            return Err(AttemptFailure::Status {
                code: status.as_u16(),
                body: truncate(body, 512),
            });
        }
        extract_content(&body)
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.config.retry.clone()
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::Http {
            endpoint: self.config.endpoint.clone(),
            api_key_env: self.config.api_key_env.clone(),
            timeout_ms: self.config.timeout.as_millis() as u64,
            max_attempts: self.config.retry.max_attempts,
            decoding: None,
        }
    }
}
