//! Deterministic offline backend.
//!
//! Responses are a pure function of (profile, seed, sample, stage, prior
//! decision) and are emitted as the canonical two-field JSON object, so the
//! strict parser runs on every mock call.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{AttemptFailure, CompletionBackend, CompletionRequest, RetryPolicy, SampleContext};
use crate::domain::{AgentDecision, BackendDescriptor, PipelineVariant, PronounFamily, StageKind};
use crate::published;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MockProfile {
    AlwaysAgree,
    AlwaysDisagree,
    /// Agrees exactly when the family is not he/she.
    GenderedFlagger,
    /// Agrees with the per-family probability of a published result table.
    TableEmulator(PipelineVariant),
}

impl MockProfile {
    /// Stance for one call. Pure in all arguments.
    pub fn choose(self, seed: u64, ctx: &SampleContext<'_>) -> bool {
        match self {
            MockProfile::AlwaysAgree => true,
            MockProfile::AlwaysDisagree => false,
            MockProfile::GenderedFlagger => !ctx.sample.pronoun_family.is_gendered(),
            MockProfile::TableEmulator(table) => {
                let agree = published::agree_count(table, ctx.sample.pronoun_family) as u128;
                let total = published::SAMPLES_PER_FAMILY as u128;
                let draw = call_hash(seed, ctx) as u128;
                // Uniform index in [0, total) from the top bits of the draw.
                ((draw * total) >> 64) < agree
            }
        }
    }
}

impl fmt::Display for MockProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockProfile::AlwaysAgree => f.write_str("always-agree"),
            MockProfile::AlwaysDisagree => f.write_str("always-disagree"),
            MockProfile::GenderedFlagger => f.write_str("gendered-flagger"),
            MockProfile::TableEmulator(v) => write!(f, "table-emulator:{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mock profile '{0}' (expected always-agree, always-disagree, gendered-flagger or table-emulator[:<variant>])")]
pub struct UnknownProfile(pub String);

impl FromStr for MockProfile {
    type Err = UnknownProfile;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always-agree" => Ok(MockProfile::AlwaysAgree),
            "always-disagree" => Ok(MockProfile::AlwaysDisagree),
            "gendered-flagger" => Ok(MockProfile::GenderedFlagger),
            "table-emulator" => Ok(MockProfile::TableEmulator(PipelineVariant::ThreeAgent)),
            other => other
                .strip_prefix("table-emulator:")
                .and_then(|v| v.parse().ok())
                .map(MockProfile::TableEmulator)
                .ok_or_else(|| UnknownProfile(s.to_string())),
        }
    }
}

/// First eight bytes (big-endian) of SHA-256 over the call inputs.
fn call_hash(seed: u64, ctx: &SampleContext<'_>) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    hasher.update(ctx.sample.id.as_str().as_bytes());
    hasher.update([0]);
    hasher.update(ctx.stage.as_str().as_bytes());
    hasher.update([0]);
    match ctx.prior {
        None => hasher.update([2]),
        Some(prior) => {
            hasher.update([prior.choose_statement() as u8]);
            hasher.update(prior.reasoning().as_bytes());
        }
    }
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn reasoning(family: PronounFamily, stage: StageKind, choice: bool) -> String {
    let lead = match stage {
        StageKind::Assistant => "",
        StageKind::LanguageAnalysis => "After reviewing the earlier decision and its reasoning: ",
        StageKind::Optimizer => "Weighing the analyses so far: ",
    };
    if choice {
        format!("{lead}The pronoun '{family}' fits the sentence and is inclusive of people of all genders.")
    } else {
        format!("{lead}The pronoun '{family}' assumes the referent's gender; a gender-neutral pronoun would be more inclusive.")
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    profile: MockProfile,
    seed: u64,
    latency: Duration,
}

impl MockBackend {
    pub fn new(profile: MockProfile, seed: u64) -> Self {
        MockBackend {
            profile,
            seed,
            latency: Duration::ZERO,
        }
    }

    /// Sleep for `latency` on every call and report it as the call latency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn profile(&self) -> MockProfile {
        self.profile
    }

    /// Raw provider text for one call.
    pub fn respond(&self, ctx: &SampleContext<'_>) -> String {
        let choice = self.profile.choose(self.seed, ctx);
        AgentDecision::new(choice, reasoning(ctx.sample.pronoun_family, ctx.stage, choice))
            .expect("mock reasoning is non-empty")
            .to_json()
    }
}

impl CompletionBackend for MockBackend {
    fn attempt(&self, _request: &CompletionRequest, ctx: &SampleContext<'_>) -> Result<String, AttemptFailure> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        Ok(self.respond(ctx))
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::none()
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::Mock {
            profile: self.profile.to_string(),
            seed: self.seed,
        }
    }

    fn reported_latency(&self) -> Option<Duration> {
        Some(self.latency)
    }
}
