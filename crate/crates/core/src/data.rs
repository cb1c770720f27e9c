//! Dataset ingestion, stratified sampling, and run-record persistence.
//!
//! Datasets are JSON Lines with one object per line carrying `antecedent`,
//! `antecedent_type`, `pronoun_family` and `sentence` (names remappable via
//! [`ColumnMapping`]). Run files are JSON Lines too: a header object with
//! the schema version and config, then one outcome per line.
//!
//! Stratified selection uses ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)` and switched to stream `family.index()` for each
//! family. Candidates are sorted by sample id, then a partial Fisher-Yates
//! shuffle draws `j = i + bounded(n - i)`, where `bounded(m)` rejects
//! `next_u64()` values at or above `u64::MAX - u64::MAX % m` and returns the
//! remainder modulo `m`.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::{
    parse_pronoun_family, DomainError, PronounFamily, RunConfigSnapshot, RunRecord, Sample, SampleOutcome,
};

pub const RUN_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LineError {
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("record must be a JSON object")]
    NotObject,
    #[error("missing field '{0}'")]
    MissingField(String),
    #[error("field '{0}' must be a string")]
    WrongType(String),
    #[error(transparent)]
    Invalid(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line_no}: {cause}")]
    MalformedLine { line_no: usize, cause: LineError },
    #[error("family {family} has {have} candidates, need {need}")]
    InsufficientSamples {
        family: PronounFamily,
        have: usize,
        need: usize,
    },
    #[error("run file schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: String, expected: String },
    #[error("run file has no header line")]
    MissingHeader,
    #[error("run file line {line_no}: {message}")]
    InvalidRunLine { line_no: usize, message: String },
    #[error("column mapping: {0}")]
    Mapping(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Source column names for the four canonical record fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub antecedent: String,
    pub antecedent_type: String,
    pub pronoun_family: String,
    pub sentence: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            antecedent: "antecedent".into(),
            antecedent_type: "antecedent_type".into(),
            pronoun_family: "pronoun_family".into(),
            sentence: "sentence".into(),
        }
    }
}

impl ColumnMapping {
    /// Read a TOML file with a `[columns]` table.
    pub fn from_toml_file(path: &Path) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        struct File {
            columns: ColumnMapping,
        }
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str::<File>(&text)
            .map(|f| f.columns)
            .map_err(|e| DataError::Mapping(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Any malformed line fails the load.
    #[default]
    Strict,
    /// Malformed lines are collected into the report and skipped.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line_no: usize,
    pub cause: LineError,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoadReport {
    /// Valid samples in file order, first occurrence of each id.
    pub samples: Vec<Sample>,
    pub malformed: Vec<MalformedLine>,
    /// Lines whose four fields repeat an earlier line exactly.
    pub duplicates: usize,
}

fn string_field(obj: &Map<String, Value>, name: &str) -> Result<String, LineError> {
    match obj.get(name) {
        None => Err(LineError::MissingField(name.to_string())),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(LineError::WrongType(name.to_string())),
    }
}

fn parse_line(line: &str, mapping: &ColumnMapping) -> Result<Sample, LineError> {
    let value: Value = serde_json::from_str(line).map_err(|e| LineError::InvalidJson(e.to_string()))?;
    let obj = value.as_object().ok_or(LineError::NotObject)?;
    let antecedent = string_field(obj, &mapping.antecedent)?;
    let antecedent_type = string_field(obj, &mapping.antecedent_type)?;
    let family = parse_pronoun_family(string_field(obj, &mapping.pronoun_family)?.trim())?;
    let sentence = string_field(obj, &mapping.sentence)?;
    Ok(Sample::new(antecedent, antecedent_type, family, sentence)?)
}

pub fn load_samples_from_reader(
    reader: impl BufRead,
    mapping: &ColumnMapping,
    mode: LoadMode,
) -> Result<LoadReport, std::io::Error> {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, mapping) {
            Ok(sample) => {
                if seen.insert(sample.id.clone()) {
                    report.samples.push(sample);
                } else {
                    report.duplicates += 1;
                }
            }
            Err(cause) => {
                report.malformed.push(MalformedLine {
                    line_no: idx + 1,
                    cause,
                });
                if mode == LoadMode::Strict {
                    break;
                }
            }
        }
    }
    Ok(report)
}

/// Load a dataset file. In strict mode the first malformed line is an error.
pub fn load_samples(path: &Path, mapping: &ColumnMapping, mode: LoadMode) -> Result<LoadReport, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut report = load_samples_from_reader(BufReader::new(file), mapping, mode).map_err(|e| io_err(path, e))?;
    if mode == LoadMode::Strict {
        if let Some(bad) = report.malformed.pop() {
            return Err(DataError::MalformedLine {
                line_no: bad.line_no,
                cause: bad.cause,
            });
        }
    }
    Ok(report)
}

fn bounded(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % n) as usize;
        }
    }
}

/// Pick `per_family` samples from each of the six families. Output is in
/// family order, then selection order. The result depends only on the set of
/// candidates, not their order in `samples`.
pub fn stratified_sample(samples: &[Sample], per_family: usize, seed: u64) -> Result<Vec<Sample>, DataError> {
    let mut selected = Vec::with_capacity(per_family * PronounFamily::ALL.len());
    if per_family == 0 {
        return Ok(selected);
    }
    for family in PronounFamily::ALL {
        let mut pool: Vec<&Sample> = samples.iter().filter(|s| s.pronoun_family == family).collect();
        if pool.len() < per_family {
            return Err(DataError::InsufficientSamples {
                family,
                have: pool.len(),
                need: per_family,
            });
        }
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(family.index() as u64);
        let n = pool.len();
        for i in 0..per_family {
            let j = i + bounded(&mut rng, n - i);
            pool.swap(i, j);
        }
        selected.extend(pool[..per_family].iter().map(|s| (*s).clone()));
    }
    Ok(selected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunHeader {
    schema_version: String,
    run_id: String,
    created_at: DateTime<Utc>,
    config: RunConfigSnapshot,
}

impl RunHeader {
    fn of(record: &RunRecord) -> Self {
        RunHeader {
            schema_version: RUN_SCHEMA_VERSION.to_string(),
            run_id: record.run_id.clone(),
            created_at: record.created_at,
            config: record.config.clone(),
        }
    }
}

/// Single writer appending outcome lines after a header.
pub struct RunWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunWriter {
    /// Truncate `path` and write the header of `record` (outcomes are not
    /// written).
    pub fn create(path: &Path, record: &RunRecord) -> Result<Self, DataError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut writer = RunWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        writer.line(&RunHeader::of(record))?;
        writer.flush()?;
        Ok(writer)
    }

    /// Reopen an existing run file for appending.
    pub fn append(path: &Path) -> Result<Self, DataError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(RunWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn line(&mut self, value: &impl Serialize) -> Result<(), DataError> {
        let text = serde_json::to_string(value).map_err(|e| io_err(&self.path, e))?;
        writeln!(self.out, "{text}").map_err(|e| io_err(&self.path, e))
    }

    pub fn write_outcome(&mut self, outcome: &SampleOutcome) -> Result<(), DataError> {
        self.line(outcome)?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<(), DataError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Write the whole record, replacing `path` atomically.
pub fn write_run(record: &RunRecord, path: &Path) -> Result<(), DataError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut writer = RunWriter::create(&tmp, record)?;
        for outcome in &record.outcomes {
            writer.line(outcome)?;
        }
        writer.flush()?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_run(path: &Path) -> Result<RunRecord, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header_line = loop {
        match lines.next() {
            None => return Err(DataError::MissingHeader),
            Some((_, line)) => {
                let line = line.map_err(|e| io_err(path, e))?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };

    let header: Value = serde_json::from_str(&header_line).map_err(|e| DataError::InvalidRunLine {
        line_no: 1,
        message: e.to_string(),
    })?;
    let version = header.get("schema_version").and_then(Value::as_str).unwrap_or("");
    if version != RUN_SCHEMA_VERSION {
        return Err(DataError::SchemaVersionMismatch {
            found: version.to_string(),
            expected: RUN_SCHEMA_VERSION.to_string(),
        });
    }
    let header: RunHeader = serde_json::from_value(header).map_err(|e| DataError::InvalidRunLine {
        line_no: 1,
        message: e.to_string(),
    })?;

    let mut outcomes = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: SampleOutcome = serde_json::from_str(&line).map_err(|e| DataError::InvalidRunLine {
            line_no: idx + 1,
            message: e.to_string(),
        })?;
        outcomes.push(outcome);
    }
    Ok(RunRecord {
        run_id: header.run_id,
        created_at: header.created_at,
        config: header.config,
        outcomes,
    })
}
