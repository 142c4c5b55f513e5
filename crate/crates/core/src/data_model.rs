//! Sample records and instruction templating.
//!
//! Raw task samples carry named text slots (`premise`, `hypothesis`, ...).
//! A per-dataset [`InstructionTemplate`] turns them into the instruction
//! text used for training, with the gold answer appended at the end.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("template placeholder `{{{0}}}` has no matching field")]
    MissingField(String),
    #[error("template is for dataset `{template}` but sample is from `{sample}`")]
    DatasetMismatch { template: String, sample: String },
    #[error("malformed template at byte {offset}: {reason}")]
    TemplateSyntax { offset: usize, reason: &'static str },
    #[error("no template configured for dataset `{0}`")]
    NoTemplate(String),
    #[error("two templates configured for dataset `{0}`")]
    DuplicateTemplate(String),
    #[error("formatted text for sample `{0}` is empty")]
    EmptyText(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate sample id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One task sample before instruction formatting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub task: String,
    pub dataset: String,
    pub fields: BTreeMap<String, String>,
    pub answer: String,
    #[serde(default)]
    pub options: Vec<String>,
}

impl RawSample {
    /// Checks that the gold answer is one of the options, when options exist.
    pub fn answer_in_options(&self) -> bool {
        self.options.is_empty() || self.options.iter().any(|o| o == &self.answer)
    }
}

/// A formatted training sample, as stored in the corpus metadata file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub task: String,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    pub token_count: u64,
}

/// Counts tokens of a formatted text.
///
/// The real count comes from the model tokenizer upstream; [`WhitespaceCounter`]
/// is the fallback when no tokenizer is available.
pub trait TokenCounter {
    fn count(&self, text: &str) -> u64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

impl<F: Fn(&str) -> u64> TokenCounter for F {
    fn count(&self, text: &str) -> u64 {
        self(text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(String),
}

/// A `{name}` placeholder pattern for one dataset. `{{` and `}}` are literal braces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionTemplate {
    dataset: String,
    pattern: String,
    answer_separator: String,
    pieces: Vec<Piece>,
}

/// Serialized form of a template, one per line in a templates file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub dataset: String,
    pub pattern: String,
    #[serde(default = "default_separator")]
    pub answer_separator: String,
}

fn default_separator() -> String {
    " ".to_string()
}

impl InstructionTemplate {
    pub fn new(dataset: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        Self::with_separator(dataset, pattern, default_separator())
    }

    pub fn with_separator(
        dataset: impl Into<String>,
        pattern: impl Into<String>,
        answer_separator: impl Into<String>,
    ) -> Result<Self> {
        let pattern = pattern.into();
        let pieces = parse_pattern(&pattern)?;
        Ok(Self {
            dataset: dataset.into(),
            pattern,
            answer_separator: answer_separator.into(),
            pieces,
        })
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn answer_separator(&self) -> &str {
        &self.answer_separator
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(name) => Some(name.as_str()),
            Piece::Literal(_) => None,
        })
    }

    fn render(&self, fields: &BTreeMap<String, String>) -> Result<String> {
        let mut out = String::with_capacity(self.pattern.len());
        for piece in &self.pieces {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => {
                    let value = fields
                        .get(name)
                        .ok_or_else(|| DataError::MissingField(name.clone()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

impl TryFrom<TemplateSpec> for InstructionTemplate {
    type Error = DataError;

    fn try_from(spec: TemplateSpec) -> Result<Self> {
        Self::with_separator(spec.dataset, spec.pattern, spec.answer_separator)
    }
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let mut chars = pattern.char_indices().peekable();
    while let Some((offset, c)) = chars.next() {
        match c {
            '{' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                literal.push('{');
            }
            '}' if matches!(chars.peek(), Some((_, '}'))) => {
                chars.next();
                literal.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some((_, '}')) => break,
                        Some((_, '{')) => {
                            return Err(DataError::TemplateSyntax {
                                offset,
                                reason: "nested `{` inside placeholder",
                            })
                        }
                        Some((_, ch)) => name.push(ch),
                        None => {
                            return Err(DataError::TemplateSyntax {
                                offset,
                                reason: "unclosed placeholder",
                            })
                        }
                    }
                }
                if name.is_empty() {
                    return Err(DataError::TemplateSyntax {
                        offset,
                        reason: "empty placeholder name",
                    });
                }
                if !literal.is_empty() {
                    pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Slot(name));
            }
            '}' => {
                return Err(DataError::TemplateSyntax {
                    offset,
                    reason: "unmatched `}`",
                })
            }
            _ => literal.push(c),
        }
    }
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(pieces)
}

/// Formats `sample` with `template` and appends the answer.
pub fn apply_template(
    sample: &RawSample,
    template: &InstructionTemplate,
    counter: &dyn TokenCounter,
) -> Result<SampleRecord> {
    if template.dataset != sample.dataset {
        return Err(DataError::DatasetMismatch {
            template: template.dataset.clone(),
            sample: sample.dataset.clone(),
        });
    }
    let mut text = template.render(&sample.fields)?;
    text.push_str(&template.answer_separator);
    text.push_str(&sample.answer);
    if text.is_empty() {
        return Err(DataError::EmptyText(sample.id.clone()));
    }
    // Whitespace-only texts still count as one token.
    let token_count = counter.count(&text).max(1);
    Ok(SampleRecord {
        id: sample.id.clone(),
        task: sample.task.clone(),
        dataset: sample.dataset.clone(),
        text,
        token_count,
    })
}

/// The single active template per dataset.
#[derive(Clone, Debug, Default)]
pub struct TemplateSet {
    by_dataset: BTreeMap<String, InstructionTemplate>,
}

impl TemplateSet {
    pub fn new(templates: impl IntoIterator<Item = InstructionTemplate>) -> Result<Self> {
        let mut by_dataset = BTreeMap::new();
        for t in templates {
            let name = t.dataset.clone();
            if by_dataset.insert(name.clone(), t).is_some() {
                return Err(DataError::DuplicateTemplate(name));
            }
        }
        Ok(Self { by_dataset })
    }

    pub fn get(&self, dataset: &str) -> Option<&InstructionTemplate> {
        self.by_dataset.get(dataset)
    }

    pub fn format(&self, sample: &RawSample, counter: &dyn TokenCounter) -> Result<SampleRecord> {
        let template = self
            .get(&sample.dataset)
            .ok_or_else(|| DataError::NoTemplate(sample.dataset.clone()))?;
        apply_template(sample, template, counter)
    }
}

/// Reads every non-blank line of a JSON-lines file as `T`, with 1-based line numbers.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<TemplateSet> {
    let specs: Vec<(usize, TemplateSpec)> = read_jsonl(path)?;
    let templates = specs
        .into_iter()
        .map(|(_, spec)| InstructionTemplate::try_from(spec))
        .collect::<Result<Vec<_>>>()?;
    TemplateSet::new(templates)
}

pub fn load_raw_samples(path: impl AsRef<Path>) -> Result<Vec<RawSample>> {
    let rows: Vec<(usize, RawSample)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, sample) in rows {
        if !seen.insert(sample.id.clone()) {
            return Err(DataError::DuplicateId {
                id: sample.id,
                line,
            });
        }
        out.push(sample);
    }
    Ok(out)
}

/// Loads corpus metadata in file order, rejecting duplicate ids.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let rows: Vec<(usize, SampleRecord)> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line, record) in rows {
        if !seen.insert(record.id.clone()) {
            return Err(DataError::DuplicateId {
                id: record.id,
                line,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut w, record).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
