//! Instruction-tuning data from CSV tables.
//!
//! Each sampled table is rendered as fixed-width text, sent to a backend
//! with the question-generation prompt, and the returned question/answer
//! pair is wrapped in the instruction prompt to form one `{input, target}`
//! training example.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ModelClient;
use crate::prompt::{fill_table_template, FilledPrompt, PromptError, PromptKind, TemplateId};

/// Separator between rendered columns.
pub const COLUMN_GAP: &str = "  ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("table needs at least one column and one row")]
    Empty,
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("cell at row {row}, column {column} contains a line break")]
    LineBreakInCell { row: usize, column: usize },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("completion has no `Question:` line followed by an `Answer:` line")]
pub struct QaParseError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no tables to sample from")]
    NoTables,
    #[error("n must be at least 1")]
    ZeroCount,
    #[error("every sample failed ({} backend, {} parse)", .0.backend_failures, .0.parse_failures)]
    AllFailed(Box<DatagenStats>),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TableSpec {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        let t = TableSpec { headers, rows };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        if self.headers.is_empty() || self.rows.is_empty() {
            return Err(TableError::Empty);
        }
        for (row, cells) in self.rows.iter().enumerate() {
            if cells.len() != self.headers.len() {
                return Err(TableError::Ragged {
                    row,
                    expected: self.headers.len(),
                    found: cells.len(),
                });
            }
        }
        for (row, cells) in std::iter::once(&self.headers).chain(&self.rows).enumerate() {
            if let Some(column) = cells.iter().position(|c| c.contains(['\n', '\r'])) {
                return Err(TableError::LineBreakInCell { row, column });
            }
        }
        Ok(())
    }

    /// Parse RFC 4180 CSV with a header row. Line breaks inside quoted
    /// cells become spaces.
    pub fn from_csv(raw: &[u8]) -> Result<Self, TableError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
        let flatten = |s: &str| s.replace("\r\n", " ").replace(['\n', '\r'], " ");
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| TableError::Csv(e.to_string()))?
            .iter()
            .map(flatten)
            .collect();
        let mut rows = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => TableError::Ragged {
                    row,
                    expected: *expected_len as usize,
                    found: *len as usize,
                },
                _ => TableError::Csv(e.to_string()),
            })?;
            rows.push(rec.iter().map(flatten).collect());
        }
        TableSpec::new(headers, rows)
    }

    /// Character width of each column over header and body.
    pub fn column_widths(&self) -> Vec<usize> {
        (0..self.headers.len())
            .map(|c| {
                std::iter::once(&self.headers)
                    .chain(&self.rows)
                    .map(|r| r[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Fixed-width text: header first, cells left-aligned and padded to the
/// column's widest cell, columns two spaces apart, no trailing spaces.
pub fn render_table(t: &TableSpec) -> Result<String, TableError> {
    t.validate()?;
    let widths = t.column_widths();
    let lines: Vec<String> = std::iter::once(&t.headers)
        .chain(&t.rows)
        .map(|cells| {
            let mut line = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    line.push_str(COLUMN_GAP);
                }
                line.push_str(cell);
                line.extend(std::iter::repeat_n(' ', w - cell.chars().count()));
            }
            line.truncate(line.trim_end().len());
            line
        })
        .collect();
    Ok(lines.join("\n"))
}

/// Load every `*.csv` in a directory, sorted by file name.
pub fn load_tables_dir(dir: &Path) -> Result<Vec<(String, TableSpec)>, DatasetError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let t = TableSpec::from_csv(&fs::read(&p)?).map_err(|e| match e {
                TableError::Csv(m) => TableError::Csv(format!("{name}: {m}")),
                other => other,
            })?;
            Ok((name, t))
        })
        .collect()
}

pub fn fill_qgen_prompt(doc: &str) -> Result<String, PromptError> {
    fill_table_template(TemplateId::QuestionGeneration, doc, "")
}

/// First `Question:` line and the first `Answer:` line after it.
pub fn parse_qa_response(raw: &str) -> Result<(String, String), QaParseError> {
    let mut lines = raw.lines().map(str::trim);
    let question = lines
        .by_ref()
        .find_map(|l| l.strip_prefix("Question:"))
        .map(str::trim)
        .ok_or(QaParseError)?;
    let answer = lines
        .find_map(|l| l.strip_prefix("Answer:"))
        .map(str::trim)
        .ok_or(QaParseError)?;
    if question.is_empty() || answer.is_empty() {
        return Err(QaParseError);
    }
    Ok((question.to_string(), answer.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningExample {
    pub input: String,
    pub target: String,
}

pub fn build_tuning_example(doc: &str, question: &str, answer: &str) -> Result<TuningExample, PromptError> {
    if answer.trim().is_empty() {
        return Err(PromptError::EmptyAnswer);
    }
    Ok(TuningExample {
        input: fill_table_template(TemplateId::Instruction, doc, question)?,
        target: answer.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatagenStats {
    pub seed: u64,
    pub requested: usize,
    pub emitted: usize,
    pub backend_failures: usize,
    pub parse_failures: usize,
    /// Positions (in the emitted list) whose target is not a substring of
    /// the rendered table.
    pub answer_not_in_document: Vec<usize>,
    /// Table index drawn for each request, in order.
    pub sampled_tables: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<TuningExample>,
    pub stats: DatagenStats,
}

/// Table indices drawn with replacement.
pub fn sample_tables(table_count: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..table_count)).collect()
}

pub fn generate_dataset(
    tables: &[TableSpec],
    n: usize,
    client: &ModelClient,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if tables.is_empty() {
        return Err(DatasetError::NoTables);
    }
    if n == 0 {
        return Err(DatasetError::ZeroCount);
    }
    let rendered: Vec<String> = tables.iter().map(render_table).collect::<Result<_, _>>()?;
    let sampled = sample_tables(tables.len(), n, seed);
    let prompts: Vec<FilledPrompt> = sampled
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            Ok(FilledPrompt::raw(
                fill_qgen_prompt(&rendered[t])?,
                PromptKind::QuestionGeneration,
                format!("gen-{i}"),
            ))
        })
        .collect::<Result<_, PromptError>>()?;

    let mut stats = DatagenStats {
        seed,
        requested: n,
        emitted: 0,
        backend_failures: 0,
        parse_failures: 0,
        answer_not_in_document: Vec::new(),
        sampled_tables: sampled.clone(),
    };
    let mut examples = Vec::new();
    for (result, &t) in client.complete_batch(&prompts).into_iter().zip(&sampled) {
        let completion = match result {
            Ok(c) => c,
            Err(e) => {
                log::warn!("question generation failed: {e}");
                stats.backend_failures += 1;
                continue;
            }
        };
        let Ok((question, answer)) = parse_qa_response(&completion.text) else {
            stats.parse_failures += 1;
            continue;
        };
        let doc = &rendered[t];
        if !doc.contains(answer.as_str()) {
            stats.answer_not_in_document.push(examples.len());
        }
        examples.push(build_tuning_example(doc, &question, &answer)?);
    }
    stats.emitted = examples.len();
    if examples.is_empty() {
        return Err(DatasetError::AllFailed(Box::new(stats)));
    }
    Ok(Dataset { examples, stats })
}

pub fn write_jsonl<W: Write>(examples: &[TuningExample], mut out: W) -> io::Result<()> {
    for e in examples {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
