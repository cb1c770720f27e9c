//! The three agent prompt templates and their rendering.
//!
//! Templates are fixed, compiled-in text. Rendering is a single left-to-right
//! pass, so braces inside bound values are never re-expanded. When a bound
//! sentence or reasoning already ends in terminal punctuation, the period
//! that follows its slot in the template is not repeated.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::domain::{AgentDecision, BooleanStyle, StageKind};

pub const ASSISTANT_TEMPLATE: &str = "Here is the prompt: {input}. You should be gender-neutral when referring to people by pronouns. Use your judgment to decide whether the pronoun fits the sentence properly to ensure inclusivity.";

pub const LANGUAGE_ANALYSIS_TEMPLATE: &str = "Here is the input: {input}. Here is a decision: {choose_statement}. Here is the reasoning to make that decision: {reasoning}. Decide whether that decision is correct if the pronoun fits the sentence. The pronoun should be inclusive of all people.";

pub const OPTIMIZER_TEMPLATE: &str = "Here is the input: {input}. Here is a decision: {choose_statement}. Here is the reasoning to make that decision: {reasoning}. Decide whether that decision is correct if the pronoun fits the sentence. Use the reasoning to finally make your choice on whether or not the pronoun fits the sentence or not.";

pub const INPUT: &str = "{input}";
pub const CHOOSE_STATEMENT: &str = "{choose_statement}";
pub const REASONING: &str = "{reasoning}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("{0} stage requires the previous stage's decision")]
    MissingPrior(StageKind),
    #[error("assistant stage does not take a prior decision")]
    UnexpectedPrior,
    #[error("failed to write template {path}: {message}")]
    Export { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub stage: StageKind,
    pub template_text: &'static str,
}

impl PromptTemplate {
    pub fn for_stage(stage: StageKind) -> Self {
        let template_text = match stage {
            StageKind::Assistant => ASSISTANT_TEMPLATE,
            StageKind::LanguageAnalysis => LANGUAGE_ANALYSIS_TEMPLATE,
            StageKind::Optimizer => OPTIMIZER_TEMPLATE,
        };
        PromptTemplate { stage, template_text }
    }

    pub fn all() -> [PromptTemplate; 3] {
        StageKind::ALL.map(PromptTemplate::for_stage)
    }

    /// File name used by [`export_templates`].
    pub fn file_name(&self) -> String {
        format!("{}.txt", self.stage.as_str())
    }
}

struct Bindings<'a> {
    input: &'a str,
    choose_statement: Option<&'a str>,
    reasoning: Option<&'a str>,
}

fn ends_with_terminal(value: &str) -> bool {
    value.ends_with(['.', '!', '?'])
}

fn expand(template: &str, bindings: &Bindings<'_>) -> String {
    let mut out = String::with_capacity(template.len() + bindings.input.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let (value, consumed) = if tail.starts_with(INPUT) {
            (Some(bindings.input), INPUT.len())
        } else if tail.starts_with(CHOOSE_STATEMENT) {
            (bindings.choose_statement, CHOOSE_STATEMENT.len())
        } else if tail.starts_with(REASONING) {
            (bindings.reasoning, REASONING.len())
        } else {
            (None, 0)
        };
        match value {
            Some(value) => {
                out.push_str(value);
                rest = &tail[consumed..];
                if ends_with_terminal(value) && rest.starts_with('.') {
                    rest = &rest[1..];
                }
            }
            None => {
                // Templates are constants; every brace opens a bound slot.
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Render the stage's template with the sentence and, for the two later
/// stages, the previous stage's decision.
pub fn render_prompt(
    stage: StageKind,
    sentence: &str,
    prior: Option<&AgentDecision>,
    style: BooleanStyle,
) -> Result<String, PromptError> {
    let template = PromptTemplate::for_stage(stage);
    let bindings = match (stage, prior) {
        (StageKind::Assistant, None) => Bindings {
            input: sentence,
            choose_statement: None,
            reasoning: None,
        },
        (StageKind::Assistant, Some(_)) => return Err(PromptError::UnexpectedPrior),
        (_, None) => return Err(PromptError::MissingPrior(stage)),
        (_, Some(prior)) => Bindings {
            input: sentence,
            choose_statement: Some(style.render(prior.choose_statement())),
            reasoning: Some(prior.reasoning()),
        },
    };
    Ok(expand(template.template_text, &bindings))
}

/// Write the three templates as `<stage>.txt` files into `dir`.
pub fn export_templates(dir: &Path) -> Result<Vec<PathBuf>, PromptError> {
    let export_err = |path: &Path, e: std::io::Error| PromptError::Export {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| export_err(dir, e))?;
    let mut written = Vec::new();
    for template in PromptTemplate::all() {
        let path = dir.join(template.file_name());
        fs::write(&path, format!("{}\n", template.template_text)).map_err(|e| export_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
