//! Shared vocabulary: pronoun families, samples, agent decisions, stage
//! traces, and run records.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use crate::error::DomainError;

/// Canonical nominative token for a pronoun set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PronounFamily {
    He,
    She,
    They,
    Xe,
    Ey,
    Fae,
}

impl PronounFamily {
    /// Reporting order: gendered families first, then the non-binary ones.
    pub const ALL: [PronounFamily; 6] = [
        PronounFamily::He,
        PronounFamily::She,
        PronounFamily::They,
        PronounFamily::Xe,
        PronounFamily::Ey,
        PronounFamily::Fae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PronounFamily::He => "he",
            PronounFamily::She => "she",
            PronounFamily::They => "they",
            PronounFamily::Xe => "xe",
            PronounFamily::Ey => "ey",
            PronounFamily::Fae => "fae",
        }
    }

    /// Row label used in result tables ("He", "Xe", ...).
    pub fn label(self) -> &'static str {
        match self {
            PronounFamily::He => "He",
            PronounFamily::She => "She",
            PronounFamily::They => "They",
            PronounFamily::Xe => "Xe",
            PronounFamily::Ey => "Ey",
            PronounFamily::Fae => "Fae",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_gendered(self) -> bool {
        matches!(self, PronounFamily::He | PronounFamily::She)
    }
}

impl fmt::Display for PronounFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PronounFamily {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pronoun_family(s)
    }
}

/// Case-insensitive match against the six family tokens.
pub fn parse_pronoun_family(token: &str) -> Result<PronounFamily, DomainError> {
    PronounFamily::ALL
        .into_iter()
        .find(|family| family.as_str().eq_ignore_ascii_case(token))
        .ok_or_else(|| DomainError::UnknownPronounFamily(token.to_string()))
}

/// The stance that counts as correct for a pronoun family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedStance {
    Agree,
    Disagree,
}

impl ExpectedStance {
    /// The `choose_statement` value that matches this stance.
    pub fn as_choice(self) -> bool {
        matches!(self, ExpectedStance::Agree)
    }
}

/// Traditionally gendered pronouns should be flagged; the non-binary
/// families should be accepted.
pub fn expected_stance(family: PronounFamily) -> ExpectedStance {
    if family.is_gendered() {
        ExpectedStance::Disagree
    } else {
        ExpectedStance::Agree
    }
}

/// Content-derived sample identifier (hex SHA-256 prefix).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(String);

impl SampleId {
    /// Length-prefixed SHA-256 over the four record fields, truncated to
    /// 128 bits.
    pub fn from_fields(antecedent: &str, antecedent_type: &str, pronoun_family: PronounFamily, sentence: &str) -> Self {
        let mut hasher = Sha256::new();
        for field in [antecedent, antecedent_type, pronoun_family.as_str(), sentence] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        let digest = hasher.finalize();
        SampleId(hex::encode(&digest[..16]))
    }

    pub fn new(id: impl Into<String>) -> Self {
        SampleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One benchmark instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sample {
    pub id: SampleId,
    pub antecedent: String,
    /// Free-form dataset label, kept verbatim (e.g. "Gendered Female").
    pub antecedent_type: String,
    pub pronoun_family: PronounFamily,
    pub sentence: String,
}

impl Sample {
    pub fn new(
        antecedent: impl Into<String>,
        antecedent_type: impl Into<String>,
        pronoun_family: PronounFamily,
        sentence: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let antecedent = antecedent.into();
        let antecedent_type = antecedent_type.into();
        let sentence = sentence.into();
        if sentence.trim().is_empty() {
            return Err(DomainError::EmptySentence);
        }
        let id = SampleId::from_fields(&antecedent, &antecedent_type, pronoun_family, &sentence);
        Ok(Sample {
            id,
            antecedent,
            antecedent_type,
            pronoun_family,
            sentence,
        })
    }

    pub fn expected_stance(&self) -> ExpectedStance {
        expected_stance(self.pronoun_family)
    }
}

/// Structured agent output: a stance plus the reasoning behind it.
///
/// `choose_statement == true` means the pronoun usage was judged to fit the
/// sentence and to be inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDecision", deny_unknown_fields)]
pub struct AgentDecision {
    choose_statement: bool,
    reasoning: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecision {
    choose_statement: bool,
    reasoning: String,
}

impl TryFrom<RawDecision> for AgentDecision {
    type Error = DomainError;

    fn try_from(raw: RawDecision) -> Result<Self, Self::Error> {
        AgentDecision::new(raw.choose_statement, raw.reasoning)
    }
}

impl AgentDecision {
    pub fn new(choose_statement: bool, reasoning: impl Into<String>) -> Result<Self, DomainError> {
        let reasoning = reasoning.into();
        if reasoning.trim().is_empty() {
            return Err(DomainError::EmptyReasoning);
        }
        Ok(AgentDecision {
            choose_statement,
            reasoning,
        })
    }

    pub fn choose_statement(&self) -> bool {
        self.choose_statement
    }

    pub fn reasoning(&self) -> &str {
        &self.reasoning
    }

    /// Canonical two-field JSON object, in schema field order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decision serialization is infallible")
    }
}

/// Position of an agent in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Assistant,
    LanguageAnalysis,
    Optimizer,
}

impl StageKind {
    pub const ALL: [StageKind; 3] = [StageKind::Assistant, StageKind::LanguageAnalysis, StageKind::Optimizer];

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Assistant => "assistant",
            StageKind::LanguageAnalysis => "language_analysis",
            StageKind::Optimizer => "optimizer",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

mod duration_millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Everything one agent saw and produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: StageKind,
    pub rendered_prompt: String,
    pub raw_response: String,
    pub decision: AgentDecision,
    pub attempt_count: u32,
    #[serde(rename = "latency_ms", with = "duration_millis")]
    pub latency: Duration,
}

/// Which chain of agents a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineVariant {
    SingleModel,
    TwoAgent,
    ThreeAgent,
}

impl PipelineVariant {
    pub fn arity(self) -> usize {
        match self {
            PipelineVariant::SingleModel => 1,
            PipelineVariant::TwoAgent => 2,
            PipelineVariant::ThreeAgent => 3,
        }
    }

    /// The stages this variant runs, in order.
    pub fn stages(self) -> &'static [StageKind] {
        &StageKind::ALL[..self.arity()]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineVariant::SingleModel => "single-model",
            PipelineVariant::TwoAgent => "two-agent",
            PipelineVariant::ThreeAgent => "three-agent",
        }
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineVariant {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single-model" => Ok(PipelineVariant::SingleModel),
            "two-agent" => Ok(PipelineVariant::TwoAgent),
            "three-agent" => Ok(PipelineVariant::ThreeAgent),
            other => Err(DomainError::UnknownVariant(other.to_string())),
        }
    }
}

/// Completed chain for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawOutcome")]
pub struct PipelineOutcome {
    sample_id: SampleId,
    pronoun_family: PronounFamily,
    variant: PipelineVariant,
    traces: Vec<StageTrace>,
    #[serde(rename = "final")]
    final_decision: AgentDecision,
}

#[derive(Deserialize)]
struct RawOutcome {
    sample_id: SampleId,
    pronoun_family: PronounFamily,
    variant: PipelineVariant,
    traces: Vec<StageTrace>,
    #[serde(rename = "final")]
    final_decision: AgentDecision,
}

impl TryFrom<RawOutcome> for PipelineOutcome {
    type Error = DomainError;

    fn try_from(raw: RawOutcome) -> Result<Self, Self::Error> {
        let outcome = PipelineOutcome::new(raw.sample_id, raw.pronoun_family, raw.variant, raw.traces)?;
        if outcome.final_decision != raw.final_decision {
            return Err(DomainError::FinalMismatch);
        }
        Ok(outcome)
    }
}

impl PipelineOutcome {
    /// Validates that the traces match the variant's stage sequence; the
    /// final decision is taken from the last trace.
    pub fn new(
        sample_id: SampleId,
        pronoun_family: PronounFamily,
        variant: PipelineVariant,
        traces: Vec<StageTrace>,
    ) -> Result<Self, DomainError> {
        if traces.len() != variant.arity() {
            return Err(DomainError::TraceCount {
                variant,
                expected: variant.arity(),
                actual: traces.len(),
            });
        }
        for (trace, expected) in traces.iter().zip(variant.stages()) {
            if trace.stage != *expected {
                return Err(DomainError::TraceOrder {
                    expected: *expected,
                    actual: trace.stage,
                });
            }
            if trace.attempt_count == 0 {
                return Err(DomainError::ZeroAttempts(trace.stage));
            }
        }
        let final_decision = traces.last().expect("arity is at least one").decision.clone();
        Ok(PipelineOutcome {
            sample_id,
            pronoun_family,
            variant,
            traces,
            final_decision,
        })
    }

    pub fn sample_id(&self) -> &SampleId {
        &self.sample_id
    }

    pub fn pronoun_family(&self) -> PronounFamily {
        self.pronoun_family
    }

    pub fn variant(&self) -> PipelineVariant {
        self.variant
    }

    pub fn traces(&self) -> &[StageTrace] {
        &self.traces
    }

    pub fn final_decision(&self) -> &AgentDecision {
        &self.final_decision
    }
}

/// A sample whose chain could not be completed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErroredSample {
    pub sample_id: SampleId,
    pub pronoun_family: PronounFamily,
    pub variant: PipelineVariant,
    pub failed_stage: StageKind,
    pub cause: String,
    /// Stages that finished before the failure.
    pub completed: Vec<StageTrace>,
}

/// Per-sample entry of a run record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SampleOutcome {
    Completed(PipelineOutcome),
    Errored(ErroredSample),
}

impl SampleOutcome {
    pub fn sample_id(&self) -> &SampleId {
        match self {
            SampleOutcome::Completed(o) => o.sample_id(),
            SampleOutcome::Errored(e) => &e.sample_id,
        }
    }

    pub fn pronoun_family(&self) -> PronounFamily {
        match self {
            SampleOutcome::Completed(o) => o.pronoun_family(),
            SampleOutcome::Errored(e) => e.pronoun_family,
        }
    }

    pub fn variant(&self) -> PipelineVariant {
        match self {
            SampleOutcome::Completed(o) => o.variant(),
            SampleOutcome::Errored(e) => e.variant,
        }
    }

    pub fn completed(&self) -> Option<&PipelineOutcome> {
        match self {
            SampleOutcome::Completed(o) => Some(o),
            SampleOutcome::Errored(_) => None,
        }
    }

    pub fn is_errored(&self) -> bool {
        matches!(self, SampleOutcome::Errored(_))
    }
}

/// How booleans are spelled inside rendered prompts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BooleanStyle {
    /// `true` / `false`
    #[default]
    Lowercase,
    /// `True` / `False`
    Titlecase,
}

impl BooleanStyle {
    pub fn render(self, value: bool) -> &'static str {
        match (self, value) {
            (BooleanStyle::Lowercase, true) => "true",
            (BooleanStyle::Lowercase, false) => "false",
            (BooleanStyle::Titlecase, true) => "True",
            (BooleanStyle::Titlecase, false) => "False",
        }
    }
}

/// Backend description as persisted in a run header. Credentials are
/// referenced by environment variable name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    Mock {
        profile: String,
        seed: u64,
    },
    Http {
        endpoint: String,
        api_key_env: String,
        timeout_ms: u64,
        max_attempts: u32,
        /// Decoding parameters sent to the provider; `None` for provider
        /// defaults.
        decoding: Option<String>,
    },
}

/// Configuration captured in the first line of a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigSnapshot {
    pub variant: PipelineVariant,
    pub backend: BackendDescriptor,
    pub model_id: String,
    pub seed: u64,
    pub parallelism: usize,
    pub boolean_style: BooleanStyle,
}

/// A batch execution: configuration plus one outcome per sample, sorted by
/// sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub config: RunConfigSnapshot,
    pub outcomes: Vec<SampleOutcome>,
}

impl RunRecord {
    pub fn new(config: RunConfigSnapshot) -> Self {
        RunRecord {
            run_id: uuid::Uuid::new_v4().to_string(),
            created_at: Utc::now(),
            config,
            outcomes: Vec::new(),
        }
    }

    /// Checks that every outcome uses the configured variant and that
    /// sample ids are unique.
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut seen = std::collections::HashSet::new();
        for outcome in &self.outcomes {
            if outcome.variant() != self.config.variant {
                return Err(DomainError::VariantMismatch {
                    expected: self.config.variant,
                    actual: outcome.variant(),
                });
            }
            if !seen.insert(outcome.sample_id()) {
                return Err(DomainError::DuplicateSample(outcome.sample_id().clone()));
            }
        }
        Ok(())
    }

    pub fn completed(&self) -> impl Iterator<Item = &PipelineOutcome> {
        self.outcomes.iter().filter_map(SampleOutcome::completed)
    }

    pub fn errored_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_errored()).count()
    }

    /// SHA-256 over the serialized outcome lines. Excludes run id and
    /// timestamp, so reruns on a deterministic backend agree.
    pub fn payload_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for outcome in &self.outcomes {
            let line = serde_json::to_string(outcome).expect("outcome serialization is infallible");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}
