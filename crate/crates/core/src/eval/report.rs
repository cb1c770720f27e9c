use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{category_rate, Category, CategoryTally, ComparisonResult, PronounTally};
use crate::domain::{expected_stance, ExpectedStance, PipelineVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub variant: PipelineVariant,
    pub tallies: Vec<PronounTally>,
    /// Category aggregates for which every member family is present.
    pub categories: Vec<CategoryTally>,
    pub errored: u64,
}

impl RunSummary {
    pub fn new(label: impl Into<String>, variant: PipelineVariant, tallies: Vec<PronounTally>) -> Self {
        let categories = Category::ALL
            .into_iter()
            .filter_map(|c| category_rate(&tallies, c).ok())
            .collect();
        let errored = tallies.iter().map(|t| t.errored).sum();
        RunSummary {
            label: label.into(),
            variant,
            tallies,
            categories,
            errored,
        }
    }
}

/// Everything a report shows, also emitted as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    pub comparisons: Vec<ComparisonResult>,
}

fn format_p(p: f64) -> String {
    if p >= 1e-4 {
        format!("{p:.4}")
    } else {
        format!("{p:.3e}")
    }
}

/// Markdown tables in the shape of the per-pronoun result tables, followed
/// by category aggregates and chi-squared comparisons.
pub fn render_report(report: &Report) -> String {
    let mut out = String::from("# Pronoun inclusivity results\n");
    for run in &report.runs {
        let _ = writeln!(out, "\n## {} ({})\n", run.label, run.variant);
        out.push_str("| Pronoun | Agree | Disagree | Correct Response Rate % |\n");
        out.push_str("|---|---:|---:|---|\n");
        for t in &run.tallies {
            let basis = match expected_stance(t.family) {
                ExpectedStance::Agree => "Agree/Total",
                ExpectedStance::Disagree => "Disagree/Total",
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} ({basis}) |",
                t.family.label(),
                t.agree,
                t.disagree,
                t.display_rate()
            );
        }
        if !run.categories.is_empty() {
            out.push_str("\n| Category | Correct | Incorrect | Correct Response Rate % |\n");
            out.push_str("|---|---:|---:|---:|\n");
            for c in &run.categories {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    c.category.title(),
                    c.correct,
                    c.incorrect,
                    c.display_rate()
                );
            }
        }
        let _ = writeln!(out, "\nErrored samples (excluded from rates): {}", run.errored);
    }
    if !report.comparisons.is_empty() {
        out.push_str("\n## Comparisons\n\n");
        out.push_str("| Comparison | Category | Table | Correction | χ² | p |\n");
        out.push_str("|---|---|---|---|---:|---:|\n");
        for c in &report.comparisons {
            let [[a, b], [x, y]] = c.contingency.0;
            let _ = writeln!(
                out,
                "| {} | {} | [[{a},{b}],[{x},{y}]] | {} | {:.2} | {} |",
                c.label,
                c.category,
                if c.yates { "yates" } else { "pearson" },
                c.chi2,
                format_p(c.p)
            );
        }
    }
    out
}
