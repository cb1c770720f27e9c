//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend failure.
//! Diagnostics go to stderr; results go to stdout or `--out`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backend::{
    BackendKind, HttpConfig, MockBackend, MockProfile, RetryPolicy, SampleContext, DEFAULT_API_KEY_ENV,
    DEFAULT_ENDPOINT, DEFAULT_MODEL_ID,
};
use crate::data::{load_samples, read_run, stratified_sample, write_run, ColumnMapping, LoadMode, RunWriter};
use crate::domain::{AgentDecision, BooleanStyle, PipelineVariant, PronounFamily, RunRecord, Sample, StageKind};
use crate::eval::{
    compare_runs, render_report, tabulate, tabulate_recorded, Category, PronounTally, Report, RunSummary,
};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError};
use crate::prompts::export_templates;

pub const ENV_ENDPOINT: &str = "PRONOUN_AGENTS_ENDPOINT";
pub const ENV_MODEL: &str = "PRONOUN_AGENTS_MODEL";
pub const ENV_API_KEY_VAR: &str = "PRONOUN_AGENTS_API_KEY_ENV";

#[derive(Debug, Parser)]
#[command(
    name = "pronoun-agents",
    version,
    about = "Multi-agent pronoun inclusivity classification and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a pipeline variant over a dataset and write a run file.
    Run(RunArgs),
    /// Tabulate one run file per pronoun family.
    Score(ScoreArgs),
    /// Tabulate several runs and compare them pairwise.
    Report(ReportArgs),
    /// Chi-squared comparison of two runs over one pronoun category.
    Compare(CompareArgs),
    /// Write the three prompt templates to text files.
    ExportPrompts(ExportArgs),
    /// Write the mock backend's raw responses for each sample and stage.
    GenMock(GenMockArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    SingleModel,
    TwoAgent,
    ThreeAgent,
}

impl From<VariantArg> for PipelineVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::SingleModel => PipelineVariant::SingleModel,
            VariantArg::TwoAgent => PipelineVariant::TwoAgent,
            VariantArg::ThreeAgent => PipelineVariant::ThreeAgent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BooleanStyleArg {
    Lowercase,
    Titlecase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CategoryArg {
    Gendered,
    NonBinary,
}

impl From<CategoryArg> for Category {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::Gendered => Category::Gendered,
            CategoryArg::NonBinary => Category::NonBinary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrectionArg {
    Pearson,
    Yates,
    /// Report both statistics side by side.
    Both,
}

impl CorrectionArg {
    fn resolve(self, yates: bool) -> Self {
        if yates {
            CorrectionArg::Yates
        } else {
            self
        }
    }

    fn modes(self) -> &'static [bool] {
        match self {
            CorrectionArg::Pearson => &[false],
            CorrectionArg::Yates => &[true],
            CorrectionArg::Both => &[false, true],
        }
    }
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Column-name mapping file (TOML with a [columns] table).
    #[arg(long)]
    pub columns: Option<PathBuf>,
    /// Skip malformed dataset lines instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON Lines dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    /// `mock:<profile>` or `http`.
    #[arg(long)]
    pub backend: String,
    /// Samples per pronoun family; all samples when omitted.
    #[arg(long)]
    pub per_family: Option<usize>,
    /// Seed for sampling and for mock backends.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Samples processed concurrently.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Run file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue a partial run file at `--out`, skipping completed samples.
    #[arg(long)]
    pub resume: bool,
    /// Model id [env: PRONOUN_AGENTS_MODEL].
    #[arg(long)]
    pub model: Option<String>,
    /// Chat-completions URL for `http` [env: PRONOUN_AGENTS_ENDPOINT].
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key
    /// [env: PRONOUN_AGENTS_API_KEY_ENV; default OPENAI_API_KEY].
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Per-request timeout for `http`.
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Attempts per stage call, counting re-asks after malformed output.
    #[arg(long, default_value_t = 5)]
    pub max_attempts: u32,
    #[arg(long, value_enum, default_value_t = BooleanStyleArg::Lowercase)]
    pub boolean_style: BooleanStyleArg,
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, visible_alias = "run-file")]
    pub run: PathBuf,
    /// Dataset used to resolve and cross-check sample families.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Markdown report destination (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine-readable results destination.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run files, in display order.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Display labels, one per run file (defaults to file stems).
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Pairs of run positions to compare, e.g. `0:1`; all pairs when omitted.
    #[arg(long = "compare")]
    pub comparisons: Vec<String>,
    #[arg(long, value_enum, default_value_t = CorrectionArg::Both)]
    pub correction: CorrectionArg,
    /// Shorthand for `--correction yates`.
    #[arg(long, conflicts_with = "correction")]
    pub yates: bool,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub run_a: PathBuf,
    #[arg(long)]
    pub run_b: PathBuf,
    #[arg(long, value_enum)]
    pub category: CategoryArg,
    #[arg(long, value_enum, default_value_t = CorrectionArg::Both)]
    pub correction: CorrectionArg,
    /// Shorthand for `--correction yates`.
    #[arg(long, conflicts_with = "correction")]
    pub yates: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenMockArgs {
    /// always-agree | always-disagree | gendered-flagger | table-emulator[:<variant>]
    #[arg(long)]
    pub profile: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::ThreeAgent)]
    pub variant: VariantArg,
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Backend(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

type Lookup<'a> = &'a dyn Fn(&str) -> Option<String>;

struct Io<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Io<'_> {
    fn note(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.stderr, "{msg}");
    }

    fn emit(&mut self, text: &str, out: Option<&Path>) -> Result<(), Failure> {
        match out {
            Some(path) => std::fs::write(path, text).map_err(|e| data_err(format!("{}: {e}", path.display()))),
            None => self
                .stdout
                .write_all(text.as_bytes())
                .map_err(|e| data_err(format!("stdout: {e}"))),
        }
    }
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(data_err)?;
    std::fs::write(path, text + "\n").map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path, args: &DatasetArgs, io: &mut Io<'_>) -> Result<Vec<Sample>, Failure> {
    let mapping = match &args.columns {
        Some(p) => ColumnMapping::from_toml_file(p).map_err(data_err)?,
        None => ColumnMapping::default(),
    };
    let mode = if args.lenient {
        LoadMode::Lenient
    } else {
        LoadMode::Strict
    };
    let report = load_samples(path, &mapping, mode).map_err(data_err)?;
    for bad in &report.malformed {
        io.note(format!("skipped line {}: {}", bad.line_no, bad.cause));
    }
    if report.duplicates > 0 {
        io.note(format!("dropped {} duplicate line(s)", report.duplicates));
    }
    Ok(report.samples)
}

fn cmd_run(args: RunArgs, env: Lookup<'_>, io: &mut Io<'_>) -> Result<(), Failure> {
    let variant = PipelineVariant::from(args.variant);
    let http = HttpConfig {
        endpoint: args
            .endpoint
            .clone()
            .or_else(|| env(ENV_ENDPOINT))
            .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string()),
        api_key_env: args
            .api_key_env
            .clone()
            .or_else(|| env(ENV_API_KEY_VAR))
            .unwrap_or_else(|| DEFAULT_API_KEY_ENV.to_string()),
        timeout: Duration::from_secs(args.timeout_secs),
        retry: RetryPolicy::default().with_max_attempts(args.max_attempts),
        max_in_flight: args.parallelism.max(1),
    };
    let backend = BackendKind::parse(&args.backend, args.seed, http).map_err(|e| Failure::Usage(e.to_string()))?;
    if args.parallelism == 0 {
        return Err(Failure::Usage("--parallelism must be at least 1".into()));
    }

    let samples = load_dataset(&args.dataset, &args.data, io)?;
    let samples = match args.per_family {
        Some(n) => stratified_sample(&samples, n, args.seed).map_err(data_err)?,
        None => samples,
    };

    let config = PipelineConfig {
        variant,
        backend,
        model_id: args
            .model
            .clone()
            .or_else(|| env(ENV_MODEL))
            .unwrap_or_else(|| DEFAULT_MODEL_ID.to_string()),
        boolean_style: match args.boolean_style {
            BooleanStyleArg::Lowercase => BooleanStyle::Lowercase,
            BooleanStyleArg::Titlecase => BooleanStyle::Titlecase,
        },
        parallelism: args.parallelism,
        seed: args.seed,
    };
    let pipeline = Pipeline::new(config, env).map_err(|e| match e {
        PipelineError::Backend(b) => Failure::Backend(b.to_string()),
        other => Failure::Usage(other.to_string()),
    })?;

    let start = if args.resume && args.out.exists() {
        let mut previous = read_run(&args.out).map_err(data_err)?;
        let before = previous.outcomes.len();
        previous.outcomes.retain(|o| !o.is_errored());
        io.note(format!(
            "resuming {}: {} completed, {} errored to retry",
            previous.run_id,
            previous.outcomes.len(),
            before - previous.outcomes.len()
        ));
        previous
    } else {
        RunRecord::new(pipeline.snapshot())
    };

    let mut seed_record = start.clone();
    seed_record.config = pipeline.snapshot();
    write_run(&seed_record, &args.out).map_err(data_err)?;
    let mut writer = RunWriter::append(&args.out).map_err(data_err)?;
    let mut write_error = None;
    let record = pipeline
        .run_batch_with(&samples, Some(start), |outcome| {
            if write_error.is_none() {
                if let Err(e) = writer.write_outcome(outcome) {
                    write_error = Some(e);
                }
            }
        })
        .map_err(|e| match e {
            PipelineError::Backend(b) => Failure::Backend(b.to_string()),
            other => Failure::Data(other.to_string()),
        })?;
    drop(writer);
    if let Some(e) = write_error {
        return Err(data_err(e));
    }
    write_run(&record, &args.out).map_err(data_err)?;

    let errored = record.errored_count();
    let _ = writeln!(
        io.stdout,
        "wrote {} outcome(s), {} errored, to {} (payload sha256 {})",
        record.outcomes.len(),
        errored,
        args.out.display(),
        record.payload_digest()
    );
    if errored > 0 {
        for outcome in record
            .outcomes
            .iter()
            .filter_map(|o| match o {
                crate::domain::SampleOutcome::Errored(e) => Some(e),
                _ => None,
            })
            .take(5)
        {
            io.note(format!(
                "sample {} failed at {}: {}",
                outcome.sample_id, outcome.failed_stage, outcome.cause
            ));
        }
    }
    if !record.outcomes.is_empty() && errored == record.outcomes.len() {
        return Err(Failure::Backend("every sample failed".into()));
    }
    Ok(())
}

fn run_tallies(record: &RunRecord, dataset: Option<&[Sample]>) -> Result<Vec<PronounTally>, Failure> {
    match dataset {
        Some(samples) => tabulate(record, samples).map_err(data_err),
        None => Ok(tabulate_recorded(record)),
    }
}

fn load_run(path: &Path) -> Result<RunRecord, Failure> {
    let record = read_run(path).map_err(data_err)?;
    record
        .validate()
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(record)
}

fn cmd_score(args: ScoreArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    let record = load_run(&args.run)?;
    let dataset = match &args.dataset {
        Some(p) => Some(load_dataset(p, &args.data, io)?),
        None => None,
    };
    let tallies = run_tallies(&record, dataset.as_deref())?;
    let report = Report {
        runs: vec![RunSummary::new(file_label(&args.run), record.config.variant, tallies)],
        comparisons: vec![],
    };
    if let Some(path) = &args.json {
        write_json(&report, path)?;
    }
    io.emit(&render_report(&report), args.out.as_deref())
}

fn file_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn parse_pair(spec: &str, count: usize) -> Result<(usize, usize), Failure> {
    let bad = || {
        Failure::Usage(format!(
            "--compare expects A:B with run positions below {count}, got '{spec}'"
        ))
    };
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a >= count || b >= count {
        return Err(bad());
    }
    Ok((a, b))
}

fn cmd_report(args: ReportArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    if !args.labels.is_empty() && args.labels.len() != args.runs.len() {
        return Err(Failure::Usage("--label must be given once per --run".into()));
    }
    let pairs = if args.comparisons.is_empty() {
        (0..args.runs.len())
            .flat_map(|a| (a + 1..args.runs.len()).map(move |b| (a, b)))
            .collect()
    } else {
        args.comparisons
            .iter()
            .map(|s| parse_pair(s, args.runs.len()))
            .collect::<Result<Vec<_>, _>>()?
    };
    let dataset = match &args.dataset {
        Some(p) => Some(load_dataset(p, &args.data, io)?),
        None => None,
    };
    let mut runs = Vec::new();
    for (i, path) in args.runs.iter().enumerate() {
        let record = load_run(path)?;
        let tallies = run_tallies(&record, dataset.as_deref())?;
        let label = args.labels.get(i).cloned().unwrap_or_else(|| file_label(path));
        runs.push(RunSummary::new(label, record.config.variant, tallies));
    }
    let mut comparisons = Vec::new();
    for (a, b) in pairs {
        for category in Category::ALL {
            for &yates in args.correction.resolve(args.yates).modes() {
                let label = format!("{} vs {}", runs[a].label, runs[b].label);
                match compare_runs(label, &runs[a].tallies, &runs[b].tallies, category, yates) {
                    Ok(c) => comparisons.push(c),
                    Err(e) => io.note(format!(
                        "skipping {} vs {} ({category}): {e}",
                        runs[a].label, runs[b].label
                    )),
                }
            }
        }
    }
    let report = Report { runs, comparisons };
    if let Some(path) = &args.json {
        write_json(&report, path)?;
    }
    io.emit(&render_report(&report), args.out.as_deref())
}

fn cmd_compare(args: CompareArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    let a = load_run(&args.run_a)?;
    let b = load_run(&args.run_b)?;
    let (ta, tb) = (tabulate_recorded(&a), tabulate_recorded(&b));
    let label = format!("{} vs {}", file_label(&args.run_a), file_label(&args.run_b));
    let comparisons = args
        .correction
        .resolve(args.yates)
        .modes()
        .iter()
        .map(|&yates| compare_runs(label.clone(), &ta, &tb, args.category.into(), yates))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data_err)?;
    let report = Report {
        runs: vec![],
        comparisons,
    };
    if let Some(path) = &args.json {
        write_json(&report, path)?;
    }
    io.emit(&render_report(&report), args.out.as_deref())
}

#[derive(Serialize)]
struct MockLine<'a> {
    sample_id: &'a str,
    pronoun_family: PronounFamily,
    stage: StageKind,
    prior: Option<&'a AgentDecision>,
    raw_response: String,
}

fn cmd_gen_mock(args: GenMockArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    let profile: MockProfile = args
        .profile
        .parse()
        .map_err(|e: crate::backend::UnknownProfile| Failure::Usage(e.to_string()))?;
    let samples = load_dataset(&args.dataset, &args.data, io)?;
    let mock = MockBackend::new(profile, args.seed);
    let mut text = String::new();
    for sample in &samples {
        let mut prior: Option<AgentDecision> = None;
        for &stage in PipelineVariant::from(args.variant).stages() {
            let ctx = SampleContext {
                sample,
                stage,
                prior: prior.as_ref(),
            };
            let raw = mock.respond(&ctx);
            let line = MockLine {
                sample_id: sample.id.as_str(),
                pronoun_family: sample.pronoun_family,
                stage,
                prior: prior.as_ref(),
                raw_response: raw.clone(),
            };
            text.push_str(&serde_json::to_string(&line).map_err(data_err)?);
            text.push('\n');
            prior = Some(crate::backend::parse_decision(&raw).map_err(data_err)?);
        }
    }
    std::fs::write(&args.out, text).map_err(|e| data_err(format!("{}: {e}", args.out.display())))?;
    io.note(format!(
        "wrote mock responses for {} sample(s) to {}",
        samples.len(),
        args.out.display()
    ));
    Ok(())
}

/// Parse `args` (including the program name) and run the command.
pub fn dispatch<I, T>(args: I, env: Lookup<'_>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    1
                }
            };
        }
    };
    let mut io = Io { stdout, stderr };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, env, &mut io),
        Command::Score(a) => cmd_score(a, &mut io),
        Command::Report(a) => cmd_report(a, &mut io),
        Command::Compare(a) => cmd_compare(a, &mut io),
        Command::ExportPrompts(a) => export_templates(&a.dir)
            .map(|paths| {
                for p in paths {
                    let _ = writeln!(io.stdout, "{}", p.display());
                }
            })
            .map_err(data_err),
        Command::GenMock(a) => cmd_gen_mock(a, &mut io),
    };
    match result {
        Ok(()) => 0,
        Err(failure) => {
            io.note(format!("error: {}", failure.message()));
            failure.code()
        }
    }
}
