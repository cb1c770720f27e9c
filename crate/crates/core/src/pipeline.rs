//! Sequential agent chains and batch execution.
//!
//! Each stage sees only the sentence and the immediately preceding stage's
//! decision and reasoning; no conversation history is carried. Samples run
//! concurrently; stages within a sample run in order.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use thiserror::Error;

use crate::backend::{
    build_request, complete, BackendError, BackendKind, CompletionBackend, SampleContext, DEFAULT_MODEL_ID,
};
use crate::domain::{
    AgentDecision, BooleanStyle, DomainError, ErroredSample, PipelineOutcome, PipelineVariant, RunConfigSnapshot,
    RunRecord, Sample, SampleId, SampleOutcome, StageKind, StageTrace,
};
use crate::prompts::{render_prompt, PromptError};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub variant: PipelineVariant,
    pub backend: BackendKind,
    pub model_id: String,
    pub boolean_style: BooleanStyle,
    pub parallelism: usize,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(variant: PipelineVariant, backend: BackendKind) -> Self {
        PipelineConfig {
            variant,
            backend,
            model_id: DEFAULT_MODEL_ID.to_string(),
            boolean_style: BooleanStyle::Lowercase,
            parallelism: 1,
            seed: 0,
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {cause}")]
pub struct StageFailed {
    pub stage: StageKind,
    pub cause: StageError,
    pub completed: Vec<StageTrace>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("sample {0} appears more than once in the batch")]
    DuplicateSample(SampleId),
    #[error("cannot resume: {0}")]
    Resume(DomainError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub struct Pipeline {
    config: PipelineConfig,
    backend: Arc<dyn CompletionBackend>,
}

impl Pipeline {
    /// Builds the configured backend; `lookup` resolves environment
    /// variables such as the API key.
    pub fn new(config: PipelineConfig, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, PipelineError> {
        let backend = config.backend.build(lookup)?;
        Pipeline::with_backend(config, backend)
    }

    pub fn with_backend(config: PipelineConfig, backend: Arc<dyn CompletionBackend>) -> Result<Self, PipelineError> {
        if config.parallelism == 0 {
            return Err(PipelineError::ZeroParallelism);
        }
        Ok(Pipeline { config, backend })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn snapshot(&self) -> RunConfigSnapshot {
        RunConfigSnapshot {
            variant: self.config.variant,
            backend: self.backend.descriptor(),
            model_id: self.config.model_id.clone(),
            seed: self.config.seed,
            parallelism: self.config.parallelism,
            boolean_style: self.config.boolean_style,
        }
    }

    pub fn run_stage(
        &self,
        stage: StageKind,
        sample: &Sample,
        prior: Option<&AgentDecision>,
    ) -> Result<StageTrace, StageError> {
        let rendered_prompt = render_prompt(stage, &sample.sentence, prior, self.config.boolean_style)?;
        let request = build_request(&rendered_prompt, &self.config.model_id)?;
        let ctx = SampleContext { sample, stage, prior };
        let completion = complete(self.backend.as_ref(), &request, &ctx)?;
        Ok(StageTrace {
            stage,
            rendered_prompt,
            raw_response: completion.raw,
            decision: completion.decision,
            attempt_count: completion.attempts,
            latency: completion.latency,
        })
    }

    /// Run the variant's stages in order, feeding each stage the previous
    /// stage's decision.
    pub fn run_pipeline(&self, sample: &Sample) -> Result<PipelineOutcome, StageFailed> {
        let mut traces: Vec<StageTrace> = Vec::with_capacity(self.config.variant.arity());
        for &stage in self.config.variant.stages() {
            let prior = traces.last().map(|t| &t.decision);
            match self.run_stage(stage, sample, prior) {
                Ok(trace) => traces.push(trace),
                Err(cause) => {
                    return Err(StageFailed {
                        stage,
                        cause,
                        completed: traces,
                    })
                }
            }
        }
        Ok(
            PipelineOutcome::new(sample.id.clone(), sample.pronoun_family, self.config.variant, traces)
                .expect("stages follow the variant order"),
        )
    }

    pub fn run_sample(&self, sample: &Sample) -> SampleOutcome {
        match self.run_pipeline(sample) {
            Ok(outcome) => SampleOutcome::Completed(outcome),
            Err(failed) => SampleOutcome::Errored(ErroredSample {
                sample_id: sample.id.clone(),
                pronoun_family: sample.pronoun_family,
                variant: self.config.variant,
                failed_stage: failed.stage,
                cause: failed.cause.to_string(),
                completed: failed.completed,
            }),
        }
    }

    pub fn run_batch(&self, samples: &[Sample]) -> Result<RunRecord, PipelineError> {
        self.run_batch_with(samples, None, |_| {})
    }

    /// Run every sample, skipping those already completed in `resume`.
    /// `on_outcome` sees each new outcome in completion order; the returned
    /// record is sorted by sample id.
    pub fn run_batch_with(
        &self,
        samples: &[Sample],
        resume: Option<RunRecord>,
        mut on_outcome: impl FnMut(&SampleOutcome),
    ) -> Result<RunRecord, PipelineError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for sample in samples {
            if !seen.insert(&sample.id) {
                return Err(PipelineError::DuplicateSample(sample.id.clone()));
            }
        }

        let mut record = match resume {
            Some(previous) => {
                if previous.config.variant != self.config.variant {
                    return Err(PipelineError::Resume(DomainError::VariantMismatch {
                        expected: self.config.variant,
                        actual: previous.config.variant,
                    }));
                }
                previous.validate().map_err(PipelineError::Resume)?;
                RunRecord {
                    config: self.snapshot(),
                    outcomes: previous
                        .outcomes
                        .into_iter()
                        .filter(|o| !o.is_errored() && seen.contains(o.sample_id()))
                        .collect(),
                    ..previous
                }
            }
            None => RunRecord::new(self.snapshot()),
        };

        let done: HashSet<SampleId> = record.outcomes.iter().map(|o| o.sample_id().clone()).collect();
        let pending: Vec<&Sample> = samples.iter().filter(|s| !done.contains(&s.id)).collect();

        let workers = self.config.parallelism.min(pending.len());
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<SampleOutcome>();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                let pending = &pending;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(sample) = pending.get(i) else { break };
                    if tx.send(self.run_sample(sample)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for outcome in rx {
                on_outcome(&outcome);
                record.outcomes.push(outcome);
            }
        });

        record.outcomes.sort_by(|a, b| a.sample_id().cmp(b.sample_id()));
        Ok(record)
    }
}

/// Index samples by id for outcome resolution.
pub fn index_samples(samples: &[Sample]) -> HashMap<&SampleId, &Sample> {
    samples.iter().map(|s| (&s.id, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{AttemptFailure, CompletionRequest, MockProfile, RetryPolicy};
    use crate::domain::{BackendDescriptor, PronounFamily};

    fn sample(family: PronounFamily) -> Sample {
        Sample::new(
            "Charlotte",
            "Gendered Female",
            family,
            format!("Charlotte is an actor, and {family} is known for film."),
        )
        .unwrap()
    }

    fn pipeline(variant: PipelineVariant, profile: MockProfile) -> Pipeline {
        Pipeline::new(
            PipelineConfig::new(variant, BackendKind::Mock { profile, seed: 7 }),
            |_| None,
        )
        .unwrap()
    }

    #[test]
    fn assistant_stage_always_agree() {
        let p = pipeline(PipelineVariant::ThreeAgent, MockProfile::AlwaysAgree);
        let trace = p
            .run_stage(StageKind::Assistant, &sample(PronounFamily::Ey), None)
            .unwrap();
        assert!(trace.decision.choose_statement());
        assert_eq!(trace.attempt_count, 1);
        assert!(trace.rendered_prompt.starts_with("Here is the prompt: Charlotte"));
    }

    #[test]
    fn analysis_stage_overrides_prior() {
        let p = pipeline(PipelineVariant::ThreeAgent, MockProfile::GenderedFlagger);
        let prior = AgentDecision::new(true, "fits").unwrap();
        let trace = p
            .run_stage(StageKind::LanguageAnalysis, &sample(PronounFamily::He), Some(&prior))
            .unwrap();
        assert!(!trace.decision.choose_statement());
        assert!(trace.rendered_prompt.contains("Here is a decision: true."));
        assert!(trace.rendered_prompt.contains("that decision: fits."));
    }

    #[test]
    fn optimizer_without_prior_fails() {
        let p = pipeline(PipelineVariant::ThreeAgent, MockProfile::AlwaysAgree);
        assert_eq!(
            p.run_stage(StageKind::Optimizer, &sample(PronounFamily::He), None),
            Err(StageError::Prompt(PromptError::MissingPrior(StageKind::Optimizer)))
        );
    }

    #[test]
    fn variants_produce_expected_chains() {
        let he = sample(PronounFamily::He);
        let o = pipeline(PipelineVariant::ThreeAgent, MockProfile::GenderedFlagger)
            .run_pipeline(&he)
            .unwrap();
        assert_eq!(o.traces().len(), 3);
        assert!(!o.final_decision().choose_statement());

        let they = sample(PronounFamily::They);
        let o = pipeline(PipelineVariant::TwoAgent, MockProfile::AlwaysAgree)
            .run_pipeline(&they)
            .unwrap();
        assert_eq!(o.traces().len(), 2);
        assert!(o.final_decision().choose_statement());

        let o = pipeline(PipelineVariant::SingleModel, MockProfile::AlwaysDisagree)
            .run_pipeline(&they)
            .unwrap();
        assert_eq!(o.traces().len(), 1);
        assert_eq!(o.traces()[0].stage, StageKind::Assistant);
        assert_eq!(o.final_decision(), &o.traces()[0].decision);
    }

    struct FailsAt(StageKind);

    impl CompletionBackend for FailsAt {
        fn attempt(&self, _: &CompletionRequest, ctx: &SampleContext<'_>) -> Result<String, AttemptFailure> {
            if ctx.stage == self.0 {
                Ok("{}".into())
            } else {
                Ok(r#"{"choose_statement":true,"reasoning":"fine"}"#.into())
            }
        }

        fn retry_policy(&self) -> RetryPolicy {
            RetryPolicy::none().with_max_attempts(2)
        }

        fn descriptor(&self) -> BackendDescriptor {
            BackendDescriptor::Mock {
                profile: "fails-at".into(),
                seed: 0,
            }
        }
    }

    fn failing(stage: StageKind) -> Pipeline {
        Pipeline::with_backend(
            PipelineConfig::new(
                PipelineVariant::ThreeAgent,
                BackendKind::Mock {
                    profile: MockProfile::AlwaysAgree,
                    seed: 0,
                },
            ),
            Arc::new(FailsAt(stage)),
        )
        .unwrap()
    }

    #[test]
    fn stage_failure_is_recorded_with_partial_traces() {
        let outcome = failing(StageKind::Optimizer).run_sample(&sample(PronounFamily::Xe));
        match outcome {
            SampleOutcome::Errored(e) => {
                assert_eq!(e.failed_stage, StageKind::Optimizer);
                assert_eq!(e.completed.len(), 2);
                assert!(e.cause.contains("2 attempt"), "{}", e.cause);
            }
            other => panic!("expected errored outcome, got {other:?}"),
        }
    }

    #[test]
    fn batch_handles_errors_and_empty_input() {
        let p = failing(StageKind::Assistant);
        let samples = vec![sample(PronounFamily::He), sample(PronounFamily::Fae)];
        let record = p.run_batch(&samples).unwrap();
        assert_eq!(record.outcomes.len(), 2);
        assert_eq!(record.errored_count(), 2);

        let record = pipeline(PipelineVariant::TwoAgent, MockProfile::AlwaysAgree)
            .run_batch(&[])
            .unwrap();
        assert!(record.outcomes.is_empty());
    }

    #[test]
    fn batch_rejects_duplicate_ids() {
        let p = pipeline(PipelineVariant::TwoAgent, MockProfile::AlwaysAgree);
        let s = sample(PronounFamily::He);
        assert!(matches!(
            p.run_batch(&[s.clone(), s]),
            Err(PipelineError::DuplicateSample(_))
        ));
    }

    #[test]
    fn zero_parallelism_rejected() {
        let config = PipelineConfig::new(
            PipelineVariant::TwoAgent,
            BackendKind::Mock {
                profile: MockProfile::AlwaysAgree,
                seed: 0,
            },
        )
        .with_parallelism(0);
        assert!(matches!(
            Pipeline::new(config, |_| None),
            Err(PipelineError::ZeroParallelism)
        ));
    }

    #[test]
    fn resume_skips_completed_and_retries_errored() {
        let samples: Vec<_> = PronounFamily::ALL.iter().map(|f| sample(*f)).collect();
        let previous = failing(StageKind::Assistant).run_batch(&samples[..2]).unwrap();
        let mut partial = pipeline(PipelineVariant::ThreeAgent, MockProfile::GenderedFlagger)
            .run_batch(&samples[2..4])
            .unwrap();
        partial.outcomes.extend(previous.outcomes);
        partial.outcomes.sort_by(|a, b| a.sample_id().cmp(b.sample_id()));
        let run_id = partial.run_id.clone();

        let p = pipeline(PipelineVariant::ThreeAgent, MockProfile::GenderedFlagger);
        let mut fresh = 0;
        let resumed = p.run_batch_with(&samples, Some(partial), |_| fresh += 1).unwrap();
        assert_eq!(fresh, 4);
        assert_eq!(resumed.run_id, run_id);
        assert_eq!(resumed.outcomes.len(), 6);
        assert_eq!(resumed.errored_count(), 0);
        assert_eq!(
            resumed.payload_digest(),
            p.run_batch(&samples).unwrap().payload_digest()
        );

        let other = pipeline(PipelineVariant::TwoAgent, MockProfile::GenderedFlagger);
        assert!(matches!(
            other.run_batch_with(&samples, Some(resumed), |_| {}),
            Err(PipelineError::Resume(_))
        ));
    }
}
