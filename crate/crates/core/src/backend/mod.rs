//! Completion providers and the strict response contract they must honor.

mod http;
mod mock;
mod parse;
mod request;
mod retry;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use http::{extract_content, HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
pub use mock::{MockBackend, MockProfile, UnknownProfile};
pub use parse::{parse_decision, MalformedOutput};
pub use request::{build_request, ChatMessage, CompletionRequest, ResponseContract, DEFAULT_MODEL_ID, SCHEMA_NAME};
pub use retry::RetryPolicy;

use crate::domain::{AgentDecision, BackendDescriptor, Sample, StageKind};

/// What the pipeline knows about the call being made. Mock backends derive
/// their answer from it; HTTP backends ignore it.
#[derive(Debug, Clone, Copy)]
pub struct SampleContext<'a> {
    pub sample: &'a Sample,
    pub stage: StageKind,
    pub prior: Option<&'a AgentDecision>,
}

/// Why a single attempt failed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttemptFailure {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by provider")]
    RateLimited { retry_after: Option<Duration> },
    #[error("provider returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("provider response envelope: {0}")]
    InvalidEnvelope(String),
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("malformed output: {0}")]
    Malformed(#[from] MalformedOutput),
    #[error("credential variable {0} is not set")]
    CredentialMissing(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("credential variable {0} is not set")]
    CredentialMissing(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: AttemptFailure },
}

/// A provider that answers one request at a time. Implementations must be
/// shareable across worker threads.
pub trait CompletionBackend: Send + Sync {
    fn attempt(&self, request: &CompletionRequest, ctx: &SampleContext<'_>) -> Result<String, AttemptFailure>;

    fn retry_policy(&self) -> RetryPolicy;

    /// Persistable description (no credentials).
    fn descriptor(&self) -> BackendDescriptor;

    /// Fixed latency to record instead of wall time, for backends whose
    /// output must be reproducible byte for byte.
    fn reported_latency(&self) -> Option<Duration> {
        None
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Arc<T> {
    fn attempt(&self, request: &CompletionRequest, ctx: &SampleContext<'_>) -> Result<String, AttemptFailure> {
        (**self).attempt(request, ctx)
    }

    fn retry_policy(&self) -> RetryPolicy {
        (**self).retry_policy()
    }

    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn reported_latency(&self) -> Option<Duration> {
        (**self).reported_latency()
    }
}

/// A provider answer that satisfied the contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub raw: String,
    pub decision: AgentDecision,
    pub attempts: u32,
    pub latency: Duration,
}

/// Call the backend until it yields a contract-conforming decision, retrying
/// per its [`RetryPolicy`]. Malformed output counts as a failed attempt.
pub fn complete(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
    ctx: &SampleContext<'_>,
) -> Result<Completion, BackendError> {
    let policy = backend.retry_policy();
    let max_attempts = policy.max_attempts.max(1);
    let started = Instant::now();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let failure = match backend.attempt(request, ctx) {
            Ok(raw) => match parse_decision(&raw) {
                Ok(decision) => {
                    let latency = backend.reported_latency().unwrap_or_else(|| started.elapsed());
                    return Ok(Completion {
                        raw,
                        decision,
                        attempts: attempt,
                        latency,
                    });
                }
                Err(malformed) => AttemptFailure::Malformed(malformed),
            },
            Err(AttemptFailure::CredentialMissing(var)) => return Err(BackendError::CredentialMissing(var)),
            Err(failure) => failure,
        };
        if attempt >= max_attempts || !policy.should_retry(&failure) {
            return Err(match failure {
                AttemptFailure::Timeout => BackendError::Timeout { attempts: attempt },
                last => BackendError::Exhausted {
                    attempts: attempt,
                    last,
                },
            });
        }
        let wait = policy.delay_for(attempt - 1, &failure);
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Backend selection as parsed from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    Http(HttpConfig),
    Mock { profile: MockProfile, seed: u64 },
}

impl BackendKind {
    /// `mock:<profile>` or `http`.
    pub fn parse(spec: &str, seed: u64, http: HttpConfig) -> Result<Self, UnknownProfile> {
        if spec == "http" {
            return Ok(BackendKind::Http(http));
        }
        let profile = spec
            .strip_prefix("mock:")
            .ok_or_else(|| UnknownProfile(spec.to_string()))?;
        Ok(BackendKind::Mock {
            profile: profile.parse()?,
            seed,
        })
    }

    pub fn build(&self, lookup: impl Fn(&str) -> Option<String>) -> Result<Arc<dyn CompletionBackend>, BackendError> {
        match self {
            BackendKind::Mock { profile, seed } => Ok(Arc::new(MockBackend::new(*profile, *seed))),
            BackendKind::Http(config) => {
                let backend = HttpBackend::new(config.clone(), lookup)
                    .map_err(|last| BackendError::Exhausted { attempts: 0, last })?;
                if !backend.has_credential() {
                    return Err(BackendError::CredentialMissing(config.api_key_env.clone()));
                }
                Ok(Arc::new(backend))
            }
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Http(_) => f.write_str("http"),
            BackendKind::Mock { profile, .. } => write!(f, "mock:{profile}"),
        }
    }
}
