use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::AttemptFailure;

/// Bounded exponential backoff. Every individual wait, including one
/// requested by a rate-limit signal, is clamped to `max_delay`, so a call
/// never waits longer than `max_delay * max_attempts` in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub multiplier: f64,
    pub max_delay: Duration,
    pub retry_on_transport: bool,
    pub retry_on_rate_limit: bool,
    pub retry_on_malformed: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_delay: Duration::from_millis(500),
            multiplier: 2.0,
            max_delay: Duration::from_secs(30),
            retry_on_transport: true,
            retry_on_rate_limit: true,
            retry_on_malformed: true,
        }
    }
}

impl RetryPolicy {
    /// A single attempt, no waiting.
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            initial_delay: Duration::ZERO,
            multiplier: 1.0,
            max_delay: Duration::ZERO,
            ..RetryPolicy::default()
        }
    }

    pub fn with_max_attempts(mut self, max_attempts: u32) -> Self {
        self.max_attempts = max_attempts.max(1);
        self
    }

    /// Backoff before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(retry.min(64) as i32);
        let secs = self.initial_delay.as_secs_f64() * factor;
        if !secs.is_finite() || secs >= self.max_delay.as_secs_f64() {
            self.max_delay
        } else {
            Duration::from_secs_f64(secs)
        }
    }

    /// Wait before retry `retry`, honoring a provider-supplied delay.
    pub fn delay_for(&self, retry: u32, failure: &AttemptFailure) -> Duration {
        let base = self.backoff(retry);
        match failure {
            AttemptFailure::RateLimited {
                retry_after: Some(after),
            } => base.max(*after).min(self.max_delay),
            _ => base,
        }
    }

    pub fn should_retry(&self, failure: &AttemptFailure) -> bool {
        match failure {
            AttemptFailure::Transport(_) | AttemptFailure::Timeout => self.retry_on_transport,
            AttemptFailure::Status { code, .. } => {
                self.retry_on_transport && (*code == 408 || (500..600).contains(code))
            }
            AttemptFailure::RateLimited { .. } => self.retry_on_rate_limit,
            AttemptFailure::Malformed(_) | AttemptFailure::InvalidEnvelope(_) | AttemptFailure::Refusal(_) => {
                self.retry_on_malformed
            }
            AttemptFailure::CredentialMissing(_) => false,
        }
    }

    /// Upper bound on the summed waits of one call.
    pub fn max_total_wait(&self) -> Duration {
        self.max_delay.saturating_mul(self.max_attempts)
    }
}
