//! OCR page model and ingestion.
//!
//! Two input formats are understood: the repo's canonical JSON
//! (`{page_id, width?, height?, segments: [{text, bbox: [x0, y0, x1, y1]}]}`)
//! and the Azure Read result layout (`analyzeResult.readResults[].lines[]`
//! with 8-number polygons). Both are normalised into [`OcrPage`] with every
//! segment invariant enforced; problems that can be repaired are counted in
//! [`IngestWarnings`] instead of failing the page.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("non-finite coordinate in segment {index}")]
    NonFinite { index: usize },
    #[error("azure read result contains no pages")]
    NoPages,
    #[error("unexpected document shape: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed QA record at index {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("QA record at index {index} is missing the `{field}` field")]
    MissingField { index: usize, field: &'static str },
    #[error("QA record at index {index} has no page ids")]
    NoPages { index: usize },
    #[error("duplicate question_id `{0}`")]
    Duplicate(String),
}

/// Axis-aligned pixel box, y grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [f64; 4]) -> Self {
        BBox { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn y_center(&self) -> f64 {
        (self.y0 + self.y1) / 2.0
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|c| c.is_finite() && *c >= 0.0)
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }

    /// Smallest box containing every point; `None` for an empty slice.
    pub fn hull(points: &[(f64, f64)]) -> Option<BBox> {
        let (&(fx, fy), rest) = points.split_first()?;
        let init = BBox::new(fx, fy, fx, fy);
        Some(rest.iter().fold(init, |b, &(x, y)| BBox {
            x0: b.x0.min(x),
            y0: b.y0.min(y),
            x1: b.x1.max(x),
            y1: b.y1.max(y),
        }))
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox::new(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSegment {
    pub text: String,
    pub bbox: BBox,
}

impl TextSegment {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Self {
        TextSegment {
            text: text.into(),
            bbox,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.text.trim().is_empty()
            && !self.text.contains(['\n', '\r'])
            && self.bbox.is_valid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrPage {
    pub page_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub segments: Vec<TextSegment>,
}

impl OcrPage {
    pub fn new(page_id: impl Into<String>, segments: Vec<TextSegment>) -> Self {
        OcrPage {
            page_id: page_id.into(),
            width: None,
            height: None,
            segments,
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("OcrPage serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcrFormat {
    #[default]
    Canonical,
    AzureRead,
}

/// Which Azure entries become segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Line,
    Word,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    #[serde(default)]
    pub granularity: Granularity,
    /// Used when the source carries no page identifier (Azure results).
    #[serde(default)]
    pub page_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestWarnings {
    pub empty_skipped: usize,
    pub bbox_swapped: usize,
    pub clamped: usize,
    pub lines_split: usize,
}

impl IngestWarnings {
    pub fn total(&self) -> usize {
        self.empty_skipped + self.bbox_swapped + self.clamped + self.lines_split
    }

    fn absorb(&mut self, other: IngestWarnings) {
        self.empty_skipped += other.empty_skipped;
        self.bbox_swapped += other.bbox_swapped;
        self.clamped += other.clamped;
        self.lines_split += other.lines_split;
    }
}

#[derive(Debug, Clone)]
pub struct ParsedPage {
    pub page: OcrPage,
    pub warnings: IngestWarnings,
}

/// Parse one page. For Azure input with several pages, the first is returned;
/// use [`parse_ocr_pages`] to get all of them.
pub fn parse_ocr(
    raw: &[u8],
    format: OcrFormat,
    opts: &IngestOptions,
) -> Result<ParsedPage, ParseError> {
    parse_ocr_pages(raw, format, opts)?
        .into_iter()
        .next()
        .ok_or(ParseError::NoPages)
}

pub fn parse_ocr_pages(
    raw: &[u8],
    format: OcrFormat,
    opts: &IngestOptions,
) -> Result<Vec<ParsedPage>, ParseError> {
    match format {
        OcrFormat::Canonical => {
            let page: OcrPage = from_json(raw)?;
            Ok(vec![normalize_page(page)?])
        }
        OcrFormat::AzureRead => parse_azure(raw, opts),
    }
}

fn from_json<T: serde::de::DeserializeOwned>(raw: &[u8]) -> Result<T, ParseError> {
    serde_json::from_slice(raw).map_err(|e| ParseError::Json {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })
}

/// serde_json reports 1-based line/column; convert to a byte offset.
fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = raw
        .split_inclusive(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(<[u8]>::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(raw.len())
}

/// Enforce segment and page invariants: split multi-line text, drop empty
/// text, swap inverted coordinates and clamp to the page.
fn normalize_page(page: OcrPage) -> Result<ParsedPage, ParseError> {
    let mut warnings = IngestWarnings::default();
    let mut segments = Vec::with_capacity(page.segments.len());
    for (index, seg) in page.segments.into_iter().enumerate() {
        let b = seg.bbox;
        if ![b.x0, b.y0, b.x1, b.y1].iter().all(|c| c.is_finite()) {
            return Err(ParseError::NonFinite { index });
        }
        let (bbox, w) = repair_bbox(b, page.width, page.height);
        warnings.absorb(w);
        split_lines(&seg.text, bbox, &mut segments, &mut warnings);
    }
    Ok(ParsedPage {
        page: OcrPage {
            page_id: page.page_id,
            width: page.width,
            height: page.height,
            segments,
        },
        warnings,
    })
}

fn repair_bbox(mut b: BBox, width: Option<f64>, height: Option<f64>) -> (BBox, IngestWarnings) {
    let mut w = IngestWarnings::default();
    if b.x0 > b.x1 {
        std::mem::swap(&mut b.x0, &mut b.x1);
        w.bbox_swapped += 1;
    }
    if b.y0 > b.y1 {
        std::mem::swap(&mut b.y0, &mut b.y1);
        w.bbox_swapped += 1;
    }
    let clamp = |v: f64, hi: Option<f64>| {
        let v = v.max(0.0);
        hi.map_or(v, |h| v.min(h))
    };
    let c = BBox::new(
        clamp(b.x0, width),
        clamp(b.y0, height),
        clamp(b.x1, width),
        clamp(b.y1, height),
    );
    if c != b {
        w.clamped += 1;
    }
    (c, w)
}

/// Multi-line text becomes one segment per line, each owning an equal
/// vertical slice of the original box.
fn split_lines(text: &str, bbox: BBox, out: &mut Vec<TextSegment>, w: &mut IngestWarnings) {
    let text = text.replace("\r\n", "\n");
    let lines: Vec<&str> = text.split(['\n', '\r']).collect();
    if lines.len() <= 1 {
        let line = lines.first().copied().unwrap_or("");
        if line.trim().is_empty() {
            w.empty_skipped += 1;
        } else {
            out.push(TextSegment::new(line, bbox));
        }
        return;
    }
    w.lines_split += 1;
    let slice = bbox.height() / lines.len() as f64;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            w.empty_skipped += 1;
            continue;
        }
        let y0 = bbox.y0 + slice * i as f64;
        let y1 = if i + 1 == lines.len() {
            bbox.y1
        } else {
            bbox.y0 + slice * (i + 1) as f64
        };
        out.push(TextSegment::new(*line, BBox::new(bbox.x0, y0, bbox.x1, y1)));
    }
}

#[derive(Deserialize)]
struct AzureRoot {
    #[serde(rename = "analyzeResult")]
    analyze_result: Option<AzureAnalyze>,
    #[serde(rename = "readResults")]
    read_results: Option<Vec<AzurePage>>,
    lines: Option<Vec<AzureLine>>,
    width: Option<f64>,
    height: Option<f64>,
    page: Option<u32>,
}

#[derive(Deserialize)]
struct AzureAnalyze {
    #[serde(rename = "readResults")]
    read_results: Vec<AzurePage>,
}

#[derive(Deserialize)]
struct AzurePage {
    page: Option<u32>,
    width: Option<f64>,
    height: Option<f64>,
    #[serde(default)]
    lines: Vec<AzureLine>,
}

#[derive(Deserialize)]
struct AzureLine {
    #[serde(rename = "boundingBox")]
    bounding_box: Vec<f64>,
    text: String,
    #[serde(default)]
    words: Vec<AzureWord>,
}

#[derive(Deserialize)]
struct AzureWord {
    #[serde(rename = "boundingBox")]
    bounding_box: Vec<f64>,
    text: String,
}

fn polygon_hull(poly: &[f64]) -> Result<BBox, ParseError> {
    if poly.len() < 2 || poly.len() % 2 != 0 {
        return Err(ParseError::Shape(format!(
            "polygon with {} coordinates",
            poly.len()
        )));
    }
    let points: Vec<(f64, f64)> = poly.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    BBox::hull(&points).ok_or_else(|| ParseError::Shape("empty polygon".into()))
}

fn parse_azure(raw: &[u8], opts: &IngestOptions) -> Result<Vec<ParsedPage>, ParseError> {
    let root: AzureRoot = from_json(raw)?;
    let pages = match (root.analyze_result, root.read_results, root.lines) {
        (Some(a), _, _) => a.read_results,
        (None, Some(r), _) => r,
        (None, None, Some(lines)) => vec![AzurePage {
            page: root.page,
            width: root.width,
            height: root.height,
            lines,
        }],
        _ => return Err(ParseError::Shape("no readResults or lines".into())),
    };
    if pages.is_empty() {
        return Err(ParseError::NoPages);
    }
    let base_id = opts.page_id.clone().unwrap_or_else(|| "page".to_string());
    let multi = pages.len() > 1;
    pages
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let page_id = if multi {
                format!("{base_id}_{}", p.page.unwrap_or(i as u32 + 1))
            } else {
                base_id.clone()
            };
            let mut segments = Vec::new();
            for line in p.lines {
                match opts.granularity {
                    Granularity::Line => segments.push(TextSegment::new(
                        line.text,
                        polygon_hull(&line.bounding_box)?,
                    )),
                    Granularity::Word => {
                        for word in line.words {
                            segments.push(TextSegment::new(
                                word.text,
                                polygon_hull(&word.bounding_box)?,
                            ));
                        }
                    }
                }
            }
            normalize_page(OcrPage {
                page_id,
                width: p.width,
                height: p.height,
                segments,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub question_id: String,
    pub question: String,
    pub page_ids: Vec<String>,
    #[serde(default, alias = "answers")]
    pub gold_answers: Vec<String>,
    /// Optional grouping label, passed through to per-group report means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Load QA records from a JSON array or from JSONL.
pub fn load_qa(raw: &[u8]) -> Result<Vec<QARecord>, RecordError> {
    let text = String::from_utf8_lossy(raw);
    let values: Vec<serde_json::Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| RecordError::Malformed {
            index: 0,
            message: e.to_string(),
        })?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(index, line)| {
                serde_json::from_str(line).map_err(|e| RecordError::Malformed {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?
    };

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        for field in ["question_id", "question", "page_ids"] {
            if value.get(field).is_none() {
                return Err(RecordError::MissingField { index, field });
            }
        }
        let record: QARecord =
            serde_json::from_value(value).map_err(|e| RecordError::Malformed {
                index,
                message: e.to_string(),
            })?;
        if record.page_ids.is_empty() {
            return Err(RecordError::NoPages { index });
        }
        if !seen.insert(record.question_id.clone()) {
            return Err(RecordError::Duplicate(record.question_id));
        }
        records.push(record);
    }
    Ok(records)
}
