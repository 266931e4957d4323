//! Task-aware prompt templates and their filling.
//!
//! Template text lives in `templates/*.txt` and is compiled in verbatim.
//! Each file marks its slots with the same brace placeholders used when the
//! templates were written down (`{Layout Aware Document placeholder}`,
//! `{Question placeholder}`, ...). Filling is a single left-to-right pass, so
//! placeholder-looking text inside a document is never re-expanded.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{self, LayoutConfig, LayoutError};
use crate::ocr::OcrPage;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("answer is empty")]
    EmptyAnswer,
    #[error("layout is off but the document contains line breaks or repeated spaces")]
    NotPlainDocument,
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "docvqa", alias = "DocVQA")]
    DocVqa,
    #[serde(rename = "infographicvqa", alias = "InfographicVQA")]
    InfographicVqa,
    #[serde(rename = "mpdocvqa", alias = "MPDocVQA", alias = "mp-docvqa")]
    MpDocVqa,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::DocVqa, TaskKind::InfographicVqa, TaskKind::MpDocVqa];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::DocVqa => "docvqa",
            TaskKind::InfographicVqa => "infographicvqa",
            TaskKind::MpDocVqa => "mpdocvqa",
        }
    }

    /// Whether each page is answered separately with a confidence.
    pub fn is_multi_page(self) -> bool {
        self == TaskKind::MpDocVqa
    }

    fn template(self) -> TemplateId {
        match self {
            TaskKind::DocVqa => TemplateId::DocVqa,
            TaskKind::InfographicVqa => TemplateId::InfographicVqa,
            TaskKind::MpDocVqa => TemplateId::MpDocVqa,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "docvqa" => Ok(TaskKind::DocVqa),
            "infographicvqa" | "infovqa" => Ok(TaskKind::InfographicVqa),
            "mpdocvqa" => Ok(TaskKind::MpDocVqa),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Which half of the prompt design is active. Turning `task_on` off swaps
/// the task template for the plain baseline; turning `layout_on` off feeds
/// space-joined OCR text instead of the layout rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    pub layout_on: bool,
    pub task_on: bool,
}

impl Default for PromptVariant {
    fn default() -> Self {
        PromptVariant::FULL
    }
}

impl PromptVariant {
    pub const FULL: PromptVariant = PromptVariant {
        layout_on: true,
        task_on: true,
    };
    pub const WITHOUT_TASK: PromptVariant = PromptVariant {
        layout_on: true,
        task_on: false,
    };
    pub const WITHOUT_LAYOUT: PromptVariant = PromptVariant {
        layout_on: false,
        task_on: true,
    };
    /// The plain baseline.
    pub const PLAIN: PromptVariant = PromptVariant {
        layout_on: false,
        task_on: false,
    };

    pub fn name(self) -> &'static str {
        match (self.layout_on, self.task_on) {
            (true, true) => "layout+task",
            (true, false) => "without-task",
            (false, true) => "without-layout",
            (false, false) => "plain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    DocVqa,
    InfographicVqa,
    MpDocVqa,
    Plain,
    QuestionGeneration,
    Instruction,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::DocVqa,
        TemplateId::InfographicVqa,
        TemplateId::MpDocVqa,
        TemplateId::Plain,
        TemplateId::QuestionGeneration,
        TemplateId::Instruction,
    ];

    /// The stored template text, placeholders included.
    pub fn source(self) -> &'static str {
        match self {
            TemplateId::DocVqa => include_str!("../templates/docvqa.txt"),
            TemplateId::InfographicVqa => include_str!("../templates/infographicvqa.txt"),
            TemplateId::MpDocVqa => include_str!("../templates/mpdocvqa.txt"),
            TemplateId::Plain => include_str!("../templates/plain.txt"),
            TemplateId::QuestionGeneration => include_str!("../templates/question_generation.txt"),
            TemplateId::Instruction => include_str!("../templates/instruction.txt"),
        }
    }

    fn markers(self) -> &'static [(&'static str, Slot)] {
        const TASK: &[(&str, Slot)] = &[
            ("{Layout Aware Document placeholder}", Slot::Document),
            ("{Question placeholder}", Slot::Question),
        ];
        const PLAIN: &[(&str, Slot)] = &[("{document}", Slot::Document), ("{question}", Slot::Question)];
        const TABLE: &[(&str, Slot)] = &[
            ("{Document string with spaces and line from CSV table}", Slot::Document),
            ("{Question}", Slot::Question),
        ];
        match self {
            TemplateId::DocVqa | TemplateId::InfographicVqa | TemplateId::MpDocVqa => TASK,
            TemplateId::Plain => PLAIN,
            TemplateId::QuestionGeneration | TemplateId::Instruction => TABLE,
        }
    }

    pub fn template(self) -> &'static Template {
        static CACHE: OnceLock<Vec<Template>> = OnceLock::new();
        let all = CACHE.get_or_init(|| TemplateId::ALL.iter().map(|id| Template::parse(*id)).collect());
        &all[TemplateId::ALL.iter().position(|t| *t == self).unwrap()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Document,
    Question,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Text(&'static str),
    Slot(Slot),
}

#[derive(Debug, Clone)]
pub struct Template {
    id: TemplateId,
    parts: Vec<Part>,
}

impl Template {
    fn parse(id: TemplateId) -> Template {
        let mut rest = id.source();
        let mut parts = Vec::new();
        loop {
            let next = id
                .markers()
                .iter()
                .filter_map(|(m, slot)| rest.find(m).map(|at| (at, *m, *slot)))
                .min_by_key(|(at, _, _)| *at);
            match next {
                Some((at, marker, slot)) => {
                    if at > 0 {
                        parts.push(Part::Text(&rest[..at]));
                    }
                    parts.push(Part::Slot(slot));
                    rest = &rest[at + marker.len()..];
                }
                None => {
                    if !rest.is_empty() {
                        parts.push(Part::Text(rest));
                    }
                    break;
                }
            }
        }
        Template { id, parts }
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn has_slot(&self, slot: Slot) -> bool {
        self.parts.contains(&Part::Slot(slot))
    }

    /// Substitute slots; returns the text and the byte range of the first
    /// document occurrence.
    pub fn render(&self, document: &str, question: &str) -> (String, Range<usize>) {
        let mut out = String::new();
        let mut doc_range = 0..0;
        for part in &self.parts {
            match part {
                Part::Text(t) => out.push_str(t),
                Part::Slot(Slot::Document) => {
                    let start = out.len();
                    out.push_str(document);
                    doc_range = start..out.len();
                }
                Part::Slot(Slot::Question) => out.push_str(question),
            }
        }
        (out, doc_range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum PromptKind {
    Qa { task: TaskKind, variant: PromptVariant },
    QuestionGeneration,
}

/// A prompt ready to send to a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledPrompt {
    pub text: String,
    pub kind: PromptKind,
    pub question_id: String,
    /// Set for per-page prompts of multi-page questions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_id: Option<String>,
    #[serde(skip)]
    doc_range: Range<usize>,
}

impl FilledPrompt {
    /// A prompt built outside the template set (e.g. read back from disk).
    pub fn raw(text: impl Into<String>, kind: PromptKind, question_id: impl Into<String>) -> Self {
        FilledPrompt {
            text: text.into(),
            kind,
            question_id: question_id.into(),
            page_id: None,
            doc_range: 0..0,
        }
    }

    pub fn with_page(mut self, page_id: impl Into<String>) -> Self {
        self.page_id = Some(page_id.into());
        self
    }

    pub fn document(&self) -> &str {
        &self.text[self.doc_range.clone()]
    }

    /// Text before and after the document region.
    pub fn framing(&self) -> (&str, &str) {
        (&self.text[..self.doc_range.start], &self.text[self.doc_range.end..])
    }

    /// Key used by fixture backends: `question_id` or `question_id/page_id`.
    pub fn fixture_key(&self) -> String {
        match &self.page_id {
            Some(p) => format!("{}/{}", self.question_id, p),
            None => self.question_id.clone(),
        }
    }
}

fn is_plain(doc: &str) -> bool {
    !doc.contains(['\n', '\r']) && !doc.contains("  ")
}

/// Fill the task template (or the plain baseline when `task_on` is off).
/// With `layout_on` off the caller must pass space-joined text, see
/// [`plain_join`].
pub fn fill_template(
    task: TaskKind,
    variant: PromptVariant,
    doc: &str,
    question: &str,
    question_id: &str,
) -> Result<FilledPrompt, PromptError> {
    if doc.trim().is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    if !variant.layout_on && !is_plain(doc) {
        return Err(PromptError::NotPlainDocument);
    }
    let id = if variant.task_on {
        task.template()
    } else {
        TemplateId::Plain
    };
    let (text, doc_range) = id.template().render(doc, question);
    Ok(FilledPrompt {
        text,
        kind: PromptKind::Qa { task, variant },
        question_id: question_id.to_string(),
        page_id: None,
        doc_range,
    })
}

/// Segment texts in reading order joined by single spaces.
pub fn plain_join(page: &OcrPage) -> Result<String, LayoutError> {
    let sorted = layout::sort_segments(page)?;
    Ok(sorted
        .iter()
        .flat_map(|s| s.text.split_whitespace())
        .collect::<Vec<_>>()
        .join(" "))
}

/// The document string a variant calls for.
pub fn document_for(page: &OcrPage, variant: PromptVariant, cfg: &LayoutConfig) -> Result<String, PromptError> {
    if variant.layout_on {
        Ok(layout::render_layout(page, cfg)?.text)
    } else {
        Ok(plain_join(page)?)
    }
}

pub(crate) fn fill_table_template(id: TemplateId, doc: &str, question: &str) -> Result<String, PromptError> {
    if doc.trim().is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    if id.template().has_slot(Slot::Question) && question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    Ok(id.template().render(doc, question).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocr::{BBox, TextSegment};

    #[test]
    fn docvqa_full_prompt_shape() {
        let p = fill_template(TaskKind::DocVqa, PromptVariant::FULL, "X", "Q?", "q").unwrap();
        assert!(p
            .text
            .starts_with("You are asked to answer questions asked on a document image."));
        assert!(p.text.ends_with("Answer:"));
        assert!(p.text.contains("short text spans taken verbatim"));
        assert_eq!(p.text.lines().count(), 10);
        assert_eq!(p.document(), "X");
    }

    #[test]
    fn plain_baseline_exact() {
        let p = fill_template(TaskKind::DocVqa, PromptVariant::PLAIN, "X", "Q?", "q").unwrap();
        assert_eq!(
            p.text,
            "Document: X\nQuestion: Q?\nDirectly extract the answer of the question from the document.\nAnswer:"
        );
    }

    #[test]
    fn mp_prompt_has_confidence_format() {
        let p = fill_template(TaskKind::MpDocVqa, PromptVariant::FULL, "X", "Q?", "q").unwrap();
        assert!(p.text.lines().any(|l| l == "[Confidence score], [Extracted Answer]"));
        assert_eq!(p.text.lines().count(), 12);
    }

    #[test]
    fn infographic_prompt_line_count() {
        let p = fill_template(TaskKind::InfographicVqa, PromptVariant::FULL, "X", "Q?", "q").unwrap();
        assert_eq!(p.text.lines().count(), 14);
        assert!(p.text.contains("Answer is a list of"));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert_eq!(
            fill_template(TaskKind::DocVqa, PromptVariant::FULL, " ", "Q?", "q").unwrap_err(),
            PromptError::EmptyDocument
        );
        assert_eq!(
            fill_template(TaskKind::DocVqa, PromptVariant::FULL, "X", "", "q").unwrap_err(),
            PromptError::EmptyQuestion
        );
    }

    #[test]
    fn layout_off_requires_plain_document() {
        let err = fill_template(TaskKind::DocVqa, PromptVariant::WITHOUT_LAYOUT, "a\nb", "Q?", "q");
        assert_eq!(err.unwrap_err(), PromptError::NotPlainDocument);
        let err = fill_template(TaskKind::DocVqa, PromptVariant::PLAIN, "a  b", "Q?", "q");
        assert_eq!(err.unwrap_err(), PromptError::NotPlainDocument);
    }

    #[test]
    fn placeholders_in_document_are_not_expanded() {
        let doc = "see {Question placeholder}";
        let p = fill_template(TaskKind::DocVqa, PromptVariant::FULL, doc, "Q?", "q").unwrap();
        assert_eq!(p.document(), doc);
        assert_eq!(p.text.matches("{Question placeholder}").count(), 1);
    }

    #[test]
    fn every_template_has_a_document_slot() {
        for id in TemplateId::ALL {
            assert!(id.template().has_slot(Slot::Document), "{id:?}");
        }
        assert!(!TemplateId::QuestionGeneration.template().has_slot(Slot::Question));
    }

    fn page(texts: &[(&str, f64, f64)]) -> OcrPage {
        OcrPage::new(
            "p",
            texts
                .iter()
                .map(|(t, x, y)| TextSegment::new(*t, BBox::new(*x, *y, x + 10.0, y + 10.0)))
                .collect(),
        )
    }

    #[test]
    fn plain_join_basics() {
        assert_eq!(
            plain_join(&page(&[("A", 0.0, 0.0), ("B", 50.0, 0.0), ("C", 0.0, 30.0)])).unwrap(),
            "A B C"
        );
        assert_eq!(plain_join(&page(&[("solo", 3.0, 3.0)])).unwrap(), "solo");
        assert_eq!(plain_join(&page(&[("a  b", 3.0, 3.0)])).unwrap(), "a b");
        assert!(plain_join(&page(&[])).is_err());
    }

    #[test]
    fn task_kind_parsing() {
        assert_eq!("DocVQA".parse::<TaskKind>().unwrap(), TaskKind::DocVqa);
        assert_eq!("mp-docvqa".parse::<TaskKind>().unwrap(), TaskKind::MpDocVqa);
        assert_eq!("infographic_vqa".parse::<TaskKind>().unwrap(), TaskKind::InfographicVqa);
        assert!("chartqa".parse::<TaskKind>().is_err());
    }
}
