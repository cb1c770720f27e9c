use thiserror::Error;

use crate::backend::BackendError;
use crate::data::DataError;
use crate::domain::{PipelineVariant, SampleId, StageKind};
use crate::eval::EvalError;
use crate::prompts::PromptError;

/// Invariant violations of the core value types.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("unknown pronoun family '{0}' (expected one of he, she, they, xe, ey, fae)")]
    UnknownPronounFamily(String),
    #[error("unknown pipeline variant '{0}' (expected single-model, two-agent or three-agent)")]
    UnknownVariant(String),
    #[error("sentence must not be empty")]
    EmptySentence,
    #[error("reasoning must not be empty")]
    EmptyReasoning,
    #[error("{variant} expects {expected} stage traces, got {actual}")]
    TraceCount {
        variant: PipelineVariant,
        expected: usize,
        actual: usize,
    },
    #[error("expected a {expected} trace, found {actual}")]
    TraceOrder { expected: StageKind, actual: StageKind },
    #[error("{0} trace reports zero attempts")]
    ZeroAttempts(StageKind),
    #[error("final decision does not match the last stage trace")]
    FinalMismatch,
    #[error("outcome variant {actual} does not match run variant {expected}")]
    VariantMismatch {
        expected: PipelineVariant,
        actual: PipelineVariant,
    },
    #[error("sample {0} appears more than once")]
    DuplicateSample(SampleId),
}

/// Umbrella error for callers that drive several modules at once.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
