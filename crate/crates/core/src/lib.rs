//! Document question answering over OCR output rendered as layout-preserving
//! plain text.
//!
//! The crate is organised along the pipeline:
//!
//! - [`ocr`]: page and QA record model, JSON ingestion
//! - [`layout`]: segments and boxes to text with spaces and line breaks
//! - [`prompt`]: task templates and their ablation variants
//! - [`client`]: model backends with retry, rate limiting and caching
//! - [`eval`]: ANLS scoring and max-confidence page selection
//! - [`datagen`]: instruction-tuning examples from CSV tables
//! - [`pipeline`]: manifest-driven end-to-end runs

pub mod client;
pub mod datagen;
pub mod eval;
pub mod layout;
pub mod ocr;
pub mod pipeline;
pub mod prompt;

pub use client::{BackendSpec, Completion, ModelClient};
pub use eval::{AnlsReport, Prediction};
pub use layout::{render_layout, LayoutConfig, LayoutText};
pub use ocr::{BBox, OcrPage, QARecord, TextSegment};
pub use pipeline::{run, RunManifest};
pub use prompt::{fill_template, FilledPrompt, PromptVariant, TaskKind};
