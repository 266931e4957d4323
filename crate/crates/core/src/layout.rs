//! Layout-preserving plain-text rendering of an OCR page.
//!
//! The page is read top to bottom and left to right, segments are grouped
//! into rows by vertical overlap, and a document-wide character width is
//! estimated from the row holding the most characters (its pixel width
//! divided by its character count). Horizontal gaps between neighbouring
//! segments are then converted into that many spaces, and rows are joined
//! by single line breaks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ocr::{OcrPage, TextSegment};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("document has no text segments")]
    EmptyDocument,
    #[error("invalid layout config: {0}")]
    InvalidConfig(String),
}

/// Bias added before rounding `gap / char_width`. Ratios that are exact
/// halves on integer pixel grids drift by an ulp under rescaling; the bias
/// makes them round the same way (up) regardless of scale.
pub const ROUNDING_BIAS: f64 = 1e-9;

/// Relative slack on the row-overlap comparison, for the same reason.
const OVERLAP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    /// Fewest spaces placed between two segments of a row.
    pub min_gap_spaces: usize,
    /// Prefix each line with spaces for its distance from the page's left edge.
    pub leading_indent: bool,
    /// Fraction of the smaller height two boxes must share to sit on one row.
    pub row_overlap_threshold: f64,
    /// Drop trailing lines until the text fits this many characters.
    pub max_chars: Option<usize>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            min_gap_spaces: 1,
            leading_indent: true,
            row_overlap_threshold: 0.5,
            max_chars: None,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.min_gap_spaces < 1 {
            return Err(LayoutError::InvalidConfig(
                "min_gap_spaces must be at least 1".into(),
            ));
        }
        let t = self.row_overlap_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(LayoutError::InvalidConfig(format!(
                "row_overlap_threshold {t} outside (0, 1]"
            )));
        }
        Ok(())
    }
}

/// Segments judged to share one visual line, ordered left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub index: usize,
    pub segments: Vec<TextSegment>,
    /// Non-space characters over all segment texts.
    pub char_count: usize,
    /// Width of the union of the row's boxes.
    pub width: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Row {
    fn start(index: usize, seg: TextSegment) -> Self {
        let (top, bottom) = (seg.bbox.y0, seg.bbox.y1);
        Row {
            index,
            segments: vec![seg],
            char_count: 0,
            width: 0.0,
            top,
            bottom,
        }
    }

    fn height(&self) -> f64 {
        self.bottom - self.top
    }

    fn push(&mut self, seg: TextSegment) {
        self.top = self.top.min(seg.bbox.y0);
        self.bottom = self.bottom.max(seg.bbox.y1);
        self.segments.push(seg);
    }

    fn finish(mut self) -> Self {
        // stable sort keeps input order for full ties
        self.segments.sort_by(|a, b| {
            a.bbox
                .x0
                .total_cmp(&b.bbox.x0)
                .then(a.bbox.y0.total_cmp(&b.bbox.y0))
        });
        self.char_count = self
            .segments
            .iter()
            .map(|s| s.text.chars().filter(|c| !c.is_whitespace()).count())
            .sum();
        let left = self.segments.iter().map(|s| s.bbox.x0).fold(f64::INFINITY, f64::min);
        let right = self
            .segments
            .iter()
            .map(|s| s.bbox.x1)
            .fold(f64::NEG_INFINITY, f64::max);
        self.width = (right - left).max(0.0);
        self
    }

    /// Build a row directly from segments (they are re-sorted by x0).
    pub fn from_segments(index: usize, segments: Vec<TextSegment>) -> Option<Self> {
        let mut iter = segments.into_iter();
        let mut row = Row::start(index, iter.next()?);
        for s in iter {
            row.push(s);
        }
        Some(row.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharWidth {
    /// Pixels per character.
    pub value: f64,
    /// Index of the row the estimate came from; `None` for the 1 px fallback.
    pub source_row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayoutText {
    pub text: String,
    pub rows_rendered: usize,
    pub truncated: bool,
}

/// Order segments by vertical center, then left edge. Exact ties keep
/// input order.
pub fn sort_segments(page: &OcrPage) -> Result<Vec<TextSegment>, LayoutError> {
    if page.segments.is_empty() {
        return Err(LayoutError::EmptyDocument);
    }
    let mut segs = page.segments.clone();
    segs.sort_by(|a, b| {
        a.bbox
            .y_center()
            .total_cmp(&b.bbox.y_center())
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
    });
    Ok(segs)
}

fn joins_row(row: &Row, seg: &TextSegment, threshold: f64) -> bool {
    let overlap = row.bottom.min(seg.bbox.y1) - row.top.max(seg.bbox.y0);
    let needed = threshold * row.height().min(seg.bbox.height());
    overlap + OVERLAP_SLACK * needed.abs() >= needed
}

/// Cluster sorted segments into rows. A segment extends the current row
/// when it overlaps the row's vertical span by at least
/// `row_overlap_threshold` of the smaller of the two heights.
pub fn group_rows(sorted: Vec<TextSegment>, cfg: &LayoutConfig) -> Result<Vec<Row>, LayoutError> {
    let mut iter = sorted.into_iter();
    let first = iter.next().ok_or(LayoutError::EmptyDocument)?;
    let mut rows = Vec::new();
    let mut current = Row::start(0, first);
    for seg in iter {
        if joins_row(&current, &seg, cfg.row_overlap_threshold) {
            current.push(seg);
        } else {
            let next = Row::start(rows.len() + 1, seg);
            rows.push(std::mem::replace(&mut current, next).finish());
        }
    }
    rows.push(current.finish());
    Ok(rows)
}

/// Pixels per character from the row with the highest character count
/// (earliest row wins ties). Zero-width rows are skipped in favour of the
/// next row by character count; if every row is zero-width, 1 px/char.
pub fn estimate_char_width(rows: &[Row]) -> CharWidth {
    let mut order: Vec<&Row> = rows.iter().collect();
    order.sort_by(|a, b| b.char_count.cmp(&a.char_count).then(a.index.cmp(&b.index)));
    order
        .into_iter()
        .find(|r| r.width > 0.0 && r.char_count > 0)
        .map(|r| CharWidth {
            value: r.width / r.char_count as f64,
            source_row: Some(r.index),
        })
        .unwrap_or(CharWidth {
            value: 1.0,
            source_row: None,
        })
}

/// Number of spaces standing in for `gap` pixels.
pub fn spaces_for_gap(gap: f64, char_width: f64, min_spaces: usize) -> usize {
    if gap <= 0.0 {
        return min_spaces;
    }
    let n = (gap / char_width + ROUNDING_BIAS).round() as usize;
    n.max(min_spaces)
}

fn indent_for(offset: f64, char_width: f64) -> usize {
    if offset <= 0.0 {
        0
    } else {
        (offset / char_width + ROUNDING_BIAS).round() as usize
    }
}

pub fn render_row(row: &Row, char_width: CharWidth, page_left: f64, cfg: &LayoutConfig) -> String {
    let cw = char_width.value;
    let mut line = String::new();
    let mut prev_right: Option<f64> = None;
    for seg in &row.segments {
        match prev_right {
            None if cfg.leading_indent => {
                line.extend(std::iter::repeat_n(' ', indent_for(seg.bbox.x0 - page_left, cw)));
            }
            None => {}
            Some(right) => {
                let n = spaces_for_gap(seg.bbox.x0 - right, cw, cfg.min_gap_spaces);
                line.extend(std::iter::repeat_n(' ', n));
            }
        }
        line.push_str(seg.text.trim());
        prev_right = Some(seg.bbox.x1);
    }
    line.truncate(line.trim_end().len());
    line
}

/// Full pipeline: sort, group, estimate character width, render rows, join
/// with `\n`.
pub fn render_layout(page: &OcrPage, cfg: &LayoutConfig) -> Result<LayoutText, LayoutError> {
    cfg.validate()?;
    let sorted = sort_segments(page)?;
    let page_left = sorted
        .iter()
        .map(|s| s.bbox.x0)
        .fold(f64::INFINITY, f64::min);
    let rows = group_rows(sorted, cfg)?;
    let cw = estimate_char_width(&rows);
    let mut lines: Vec<String> = rows
        .iter()
        .map(|r| render_row(r, cw, page_left, cfg))
        .collect();

    let mut truncated = false;
    if let Some(budget) = cfg.max_chars {
        let mut total = joined_len(&lines);
        while total > budget && !lines.is_empty() {
            lines.pop();
            total = joined_len(&lines);
            truncated = true;
        }
    }
    Ok(LayoutText {
        rows_rendered: lines.len(),
        text: lines.join("\n"),
        truncated,
    })
}

fn joined_len(lines: &[String]) -> usize {
    let chars: usize = lines.iter().map(|l| l.chars().count()).sum();
    chars + lines.len().saturating_sub(1)
}
