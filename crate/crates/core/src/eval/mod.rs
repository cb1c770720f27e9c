//! Directional scoring, per-pronoun tallies, category aggregates, and
//! chi-squared comparisons between runs.

mod report;
mod stats;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{render_report, Report, RunSummary};
pub use stats::{chi2_2x2, chi2_sf_df1, erfc, Contingency};

use crate::domain::{
    expected_stance, ExpectedStance, PipelineOutcome, PronounFamily, RunRecord, Sample, SampleId, SampleOutcome,
};
use crate::pipeline::index_samples;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("outcome for sample {outcome} scored against sample {sample}")]
    SampleMismatch { sample: SampleId, outcome: SampleId },
    #[error("outcome references unknown sample {0}")]
    UnresolvedSample(SampleId),
    #[error("sample {id} is {dataset} in the dataset but {recorded} in the run")]
    FamilyMismatch {
        id: SampleId,
        dataset: PronounFamily,
        recorded: PronounFamily,
    },
    #[error("no tally for family {0}")]
    MissingFamily(PronounFamily),
    #[error("contingency table {0:?} has a zero marginal")]
    DegenerateTable(Contingency),
    #[error("chi-squared statistic must be non-negative, got {0}")]
    NegativeStatistic(f64),
}

/// Whether the final stance matches the family's expected stance.
pub fn score_outcome(sample: &Sample, outcome: &PipelineOutcome) -> Result<bool, EvalError> {
    if &sample.id != outcome.sample_id() {
        return Err(EvalError::SampleMismatch {
            sample: sample.id.clone(),
            outcome: outcome.sample_id().clone(),
        });
    }
    Ok(outcome.final_decision().choose_statement() == sample.expected_stance().as_choice())
}

/// `round(1000 * num / den)` with halves rounded away from zero, i.e. a
/// percentage in tenths. Exact for integer inputs.
fn percent_tenths(num: u64, den: u64) -> Option<u64> {
    (den > 0).then(|| (2000 * num + den) / (2 * den))
}

/// Percentage with one decimal place, or `n/a` for an empty denominator.
pub fn format_rate(num: u64, den: u64) -> String {
    match percent_tenths(num, den) {
        Some(t) => format!("{}.{}", t / 10, t % 10),
        None => "n/a".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounTally {
    pub family: PronounFamily,
    pub agree: u64,
    pub disagree: u64,
    pub errored: u64,
}

impl PronounTally {
    pub fn new(family: PronounFamily) -> Self {
        PronounTally {
            family,
            agree: 0,
            disagree: 0,
            errored: 0,
        }
    }

    pub fn from_counts(family: PronounFamily, agree: u64, disagree: u64) -> Self {
        PronounTally {
            agree,
            disagree,
            ..PronounTally::new(family)
        }
    }

    pub fn answered(&self) -> u64 {
        self.agree + self.disagree
    }

    pub fn correct(&self) -> u64 {
        match expected_stance(self.family) {
            ExpectedStance::Agree => self.agree,
            ExpectedStance::Disagree => self.disagree,
        }
    }

    pub fn incorrect(&self) -> u64 {
        self.answered() - self.correct()
    }

    /// Exact percentage; `None` when nothing was answered.
    pub fn correct_rate(&self) -> Option<f64> {
        let answered = self.answered();
        (answered > 0).then(|| 100.0 * self.correct() as f64 / answered as f64)
    }

    pub fn display_rate(&self) -> String {
        format_rate(self.correct(), self.answered())
    }

    fn record(&mut self, outcome: &SampleOutcome) {
        match outcome {
            SampleOutcome::Completed(o) if o.final_decision().choose_statement() => self.agree += 1,
            SampleOutcome::Completed(_) => self.disagree += 1,
            SampleOutcome::Errored(_) => self.errored += 1,
        }
    }
}

fn collect(tallies: [PronounTally; 6], present: [bool; 6]) -> Vec<PronounTally> {
    tallies
        .into_iter()
        .zip(present)
        .filter_map(|(t, p)| p.then_some(t))
        .collect()
}

/// Tally a run, resolving each outcome's family through `samples`.
pub fn tabulate(run: &RunRecord, samples: &[Sample]) -> Result<Vec<PronounTally>, EvalError> {
    let by_id = index_samples(samples);
    let mut tallies = PronounFamily::ALL.map(PronounTally::new);
    let mut present = [false; 6];
    for outcome in &run.outcomes {
        let sample = by_id
            .get(outcome.sample_id())
            .ok_or_else(|| EvalError::UnresolvedSample(outcome.sample_id().clone()))?;
        if sample.pronoun_family != outcome.pronoun_family() {
            return Err(EvalError::FamilyMismatch {
                id: sample.id.clone(),
                dataset: sample.pronoun_family,
                recorded: outcome.pronoun_family(),
            });
        }
        if let SampleOutcome::Completed(o) = outcome {
            score_outcome(sample, o)?;
        }
        let idx = sample.pronoun_family.index();
        tallies[idx].record(outcome);
        present[idx] = true;
    }
    Ok(collect(tallies, present))
}

/// Tally a run using the families recorded alongside each outcome.
pub fn tabulate_recorded(run: &RunRecord) -> Vec<PronounTally> {
    let mut tallies = PronounFamily::ALL.map(PronounTally::new);
    let mut present = [false; 6];
    for outcome in &run.outcomes {
        let idx = outcome.pronoun_family().index();
        tallies[idx].record(outcome);
        present[idx] = true;
    }
    collect(tallies, present)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    /// he, she
    Gendered,
    /// they, xe, ey, fae
    NonBinary,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Gendered, Category::NonBinary];

    pub fn members(self) -> &'static [PronounFamily] {
        match self {
            Category::Gendered => &PronounFamily::ALL[..2],
            Category::NonBinary => &PronounFamily::ALL[2..],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Gendered => "gendered",
            Category::NonBinary => "non-binary",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::Gendered => "Traditionally gendered (he, she)",
            Category::NonBinary => "Non-binary (they, xe, ey, fae)",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gendered" => Ok(Category::Gendered),
            "non-binary" | "nonbinary" => Ok(Category::NonBinary),
            other => Err(format!("unknown category '{other}' (expected gendered or non-binary)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub category: Category,
    pub correct: u64,
    pub incorrect: u64,
    pub errored: u64,
}

impl CategoryTally {
    pub fn answered(&self) -> u64 {
        self.correct + self.incorrect
    }

    pub fn rate(&self) -> Option<f64> {
        let answered = self.answered();
        (answered > 0).then(|| 100.0 * self.correct as f64 / answered as f64)
    }

    pub fn display_rate(&self) -> String {
        format_rate(self.correct, self.answered())
    }
}

/// Pooled counts over the category's families (not an average of rates).
pub fn category_rate(tallies: &[PronounTally], category: Category) -> Result<CategoryTally, EvalError> {
    let mut out = CategoryTally {
        category,
        correct: 0,
        incorrect: 0,
        errored: 0,
    };
    for &family in category.members() {
        let tally = tallies
            .iter()
            .find(|t| t.family == family)
            .ok_or(EvalError::MissingFamily(family))?;
        out.correct += tally.correct();
        out.incorrect += tally.incorrect();
        out.errored += tally.errored;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub label: String,
    pub category: Category,
    pub contingency: Contingency,
    pub chi2: f64,
    pub p: f64,
    pub yates: bool,
}

/// Chi-squared test of correct/incorrect counts between two runs, pooled
/// over `category`.
pub fn compare_runs(
    label: impl Into<String>,
    run_a: &[PronounTally],
    run_b: &[PronounTally],
    category: Category,
    yates: bool,
) -> Result<ComparisonResult, EvalError> {
    let a = category_rate(run_a, category)?;
    let b = category_rate(run_b, category)?;
    let contingency = Contingency::new(a.correct, a.incorrect, b.correct, b.incorrect);
    let rows = contingency.row_sums();
    let cols = contingency.col_sums();
    // Both runs answered but landed entirely in one outcome column: there is
    // no difference between them to test.
    let (chi2, p) = if !rows.contains(&0) && cols.contains(&0) {
        (0.0, 1.0)
    } else {
        let chi2 = chi2_2x2(&contingency, yates)?;
        (chi2, chi2_sf_df1(chi2)?)
    };
    Ok(ComparisonResult {
        label: label.into(),
        category,
        contingency,
        chi2,
        p,
        yates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AgentDecision, PipelineVariant, StageKind, StageTrace};
    use proptest::prelude::*;
    use std::time::Duration;

    fn tallies(counts: [(u64, u64); 6]) -> Vec<PronounTally> {
        PronounFamily::ALL
            .iter()
            .zip(counts)
            .map(|(f, (a, d))| PronounTally::from_counts(*f, a, d))
            .collect()
    }

    fn outcome(sample: &Sample, choice: bool) -> PipelineOutcome {
        let trace = StageTrace {
            stage: StageKind::Assistant,
            rendered_prompt: "p".into(),
            raw_response: "r".into(),
            decision: AgentDecision::new(choice, "because").unwrap(),
            attempt_count: 1,
            latency: Duration::ZERO,
        };
        PipelineOutcome::new(
            sample.id.clone(),
            sample.pronoun_family,
            PipelineVariant::SingleModel,
            vec![trace],
        )
        .unwrap()
    }

    fn sample(family: PronounFamily) -> Sample {
        Sample::new("Alex", "Gendered Male", family, format!("Alex said {family} was done.")).unwrap()
    }

    #[test]
    fn scoring_rules() {
        let he = sample(PronounFamily::He);
        assert!(score_outcome(&he, &outcome(&he, false)).unwrap());
        let fae = sample(PronounFamily::Fae);
        assert!(score_outcome(&fae, &outcome(&fae, true)).unwrap());
        let ey = sample(PronounFamily::Ey);
        assert!(!score_outcome(&ey, &outcome(&ey, false)).unwrap());
        assert!(matches!(
            score_outcome(&ey, &outcome(&fae, true)),
            Err(EvalError::SampleMismatch { .. })
        ));
    }

    #[test]
    fn rate_rounding() {
        assert_eq!(format_rate(101, 250), "40.4");
        assert_eq!(format_rate(248, 250), "99.2");
        assert_eq!(format_rate(250, 250), "100.0");
        assert_eq!(format_rate(0, 250), "0.0");
        assert_eq!(format_rate(1, 8), "12.5");
        // 1/16 = 6.25 rounds away from zero.
        assert_eq!(format_rate(1, 16), "6.3");
        assert_eq!(format_rate(0, 0), "n/a");
        let she = PronounTally::from_counts(PronounFamily::She, 0, 250);
        assert_eq!(she.display_rate(), "100.0");
        assert_eq!(she.correct_rate(), Some(100.0));
    }

    #[test]
    fn pooled_categories() {
        let gpt = tallies([(149, 101), (186, 64), (250, 0), (199, 51), (224, 26), (246, 4)]);
        let g = category_rate(&gpt, Category::Gendered).unwrap();
        assert_eq!((g.correct, g.incorrect), (165, 335));
        assert_eq!(g.display_rate(), "33.0");
        let nb = category_rate(&gpt, Category::NonBinary).unwrap();
        assert_eq!((nb.correct, nb.answered()), (919, 1000));
        assert_eq!(nb.display_rate(), "91.9");
        assert_eq!(
            category_rate(&gpt[..3], Category::NonBinary).unwrap_err(),
            EvalError::MissingFamily(PronounFamily::Xe)
        );
    }

    #[test]
    fn identical_runs_compare_to_zero() {
        let t = tallies([(79, 171), (100, 150), (248, 2), (212, 38), (228, 22), (245, 5)]);
        let r = compare_runs("self", &t, &t, Category::Gendered, false).unwrap();
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.p, 1.0);

        let perfect = tallies([(0, 250), (0, 250), (250, 0), (250, 0), (250, 0), (250, 0)]);
        for yates in [false, true] {
            let r = compare_runs("flagger", &perfect, &perfect, Category::Gendered, yates).unwrap();
            assert_eq!((r.chi2, r.p), (0.0, 1.0));
        }
        let empty = tallies([(0, 0), (0, 0), (250, 0), (250, 0), (250, 0), (250, 0)]);
        assert!(matches!(
            compare_runs("empty", &empty, &perfect, Category::Gendered, false),
            Err(EvalError::DegenerateTable(_))
        ));
    }

    #[test]
    fn tabulate_resolves_and_counts_errors() {
        use crate::domain::{BackendDescriptor, BooleanStyle, ErroredSample, RunConfigSnapshot};
        let he = sample(PronounFamily::He);
        let xe = sample(PronounFamily::Xe);
        let mut run = RunRecord::new(RunConfigSnapshot {
            variant: PipelineVariant::SingleModel,
            backend: BackendDescriptor::Mock {
                profile: "always-agree".into(),
                seed: 0,
            },
            model_id: "m".into(),
            seed: 0,
            parallelism: 1,
            boolean_style: BooleanStyle::Lowercase,
        });
        run.outcomes.push(SampleOutcome::Completed(outcome(&he, true)));
        run.outcomes.push(SampleOutcome::Errored(ErroredSample {
            sample_id: xe.id.clone(),
            pronoun_family: PronounFamily::Xe,
            variant: PipelineVariant::SingleModel,
            failed_stage: StageKind::Assistant,
            cause: "x".into(),
            completed: vec![],
        }));
        let t = tabulate(&run, &[he.clone(), xe.clone()]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].family, t[0].agree, t[0].disagree), (PronounFamily::He, 1, 0));
        assert_eq!(
            (t[1].family, t[1].errored, t[1].correct_rate()),
            (PronounFamily::Xe, 1, None)
        );
        assert_eq!(t, tabulate_recorded(&run));
        assert!(matches!(tabulate(&run, &[he]), Err(EvalError::UnresolvedSample(_))));
    }

    proptest! {
        #[test]
        fn flipping_stance_flips_score(idx in 0usize..6, choice: bool) {
            let s = sample(PronounFamily::ALL[idx]);
            let a = score_outcome(&s, &outcome(&s, choice)).unwrap();
            let b = score_outcome(&s, &outcome(&s, !choice)).unwrap();
            prop_assert_ne!(a, b);
        }

        #[test]
        fn display_rate_matches_exact_rate(correct in 0u64..5000, extra in 0u64..5000) {
            let total = correct + extra;
            prop_assume!(total > 0);
            let exact = 100.0 * correct as f64 / total as f64;
            let shown: f64 = format_rate(correct, total).parse().unwrap();
            prop_assert!((shown - exact).abs() <= 0.05 + 1e-9);
        }
    }
}
