//! End-to-end runs: OCR pages -> layout text -> prompts -> completions ->
//! predictions -> ANLS report.
//!
//! Every run writes into `output_dir/run-<hash>/`, where the hash covers
//! the manifest and the QA file contents:
//!
//! | file               | contents                                             |
//! |--------------------|------------------------------------------------------|
//! | `manifest.json`    | the manifest as executed                             |
//! | `prompts.jsonl`    | `{question_id, page_id?, prompt_hash, prompt}`       |
//! | `run_log.jsonl`    | `{question_id, page_id?, prompt_hash, completion, latency_ms, attempts, cached, error?}` |
//! | `predictions.jsonl`| `{question_id, answer, confidence?}`                 |
//! | `report.json`      | the [`AnlsReport`] plus failures                     |

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{sha256_hex, BackendSpec, ClientError, Completion, ModelClient, RunLogEntry};
use crate::eval::{self, AnlsOptions, AnlsReport, EvalError, Prediction};
use crate::layout::LayoutConfig;
use crate::ocr::{self, Granularity, IngestOptions, OcrFormat, OcrPage, ParseError, QARecord, RecordError};
use crate::prompt::{self, FilledPrompt, PromptError, PromptVariant, TaskKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error("question {question_id}, page {page_id}: {source}")]
    Ocr {
        question_id: String,
        page_id: String,
        source: ParseError,
    },
    #[error("question {question_id}: {source}")]
    Prompt { question_id: String, source: PromptError },
    #[error("question {question_id}: {message}")]
    Record { question_id: String, message: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything needed to reproduce a run. Relative paths are resolved
/// against the manifest file's directory by [`RunManifest::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task: TaskKind,
    #[serde(default)]
    pub variant: PromptVariant,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub layout: LayoutConfig,
    /// QA records, JSONL or JSON array.
    pub qa_path: PathBuf,
    /// Directory holding one `<page_id>.json` per page.
    pub ocr_dir: PathBuf,
    #[serde(default)]
    pub ocr_format: OcrFormat,
    #[serde(default)]
    pub granularity: Granularity,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub anls: AnlsOptions,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let raw = fs::read(path).map_err(io_err(path))?;
        let mut m: RunManifest = serde_json::from_slice(&raw).map_err(|e| RunError::Manifest(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.qa_path, &mut m.ocr_dir, &mut m.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [m.cache_dir.as_mut(), m.backend.fixture_path.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub question_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub report: AnlsReport,
    pub run_dir: PathBuf,
    pub failures: Vec<RunFailure>,
    /// Backend invocations made by this run; 0 when fully served from cache.
    pub backend_calls: usize,
    pub predictions: Vec<Prediction>,
}

struct PageStore<'a> {
    manifest: &'a RunManifest,
    pages: HashMap<String, OcrPage>,
}

impl PageStore<'_> {
    fn get(&mut self, question_id: &str, page_id: &str) -> Result<&OcrPage, RunError> {
        if !self.pages.contains_key(page_id) {
            let path = self.manifest.ocr_dir.join(format!("{page_id}.json"));
            let raw = fs::read(&path).map_err(io_err(&path))?;
            let opts = IngestOptions {
                granularity: self.manifest.granularity,
                page_id: Some(page_id.to_string()),
            };
            let parsed = ocr::parse_ocr(&raw, self.manifest.ocr_format, &opts).map_err(|source| RunError::Ocr {
                question_id: question_id.to_string(),
                page_id: page_id.to_string(),
                source,
            })?;
            if parsed.warnings.total() > 0 {
                log::info!("page {page_id}: {:?}", parsed.warnings);
            }
            self.pages.insert(page_id.to_string(), parsed.page);
        }
        Ok(&self.pages[page_id])
    }
}

/// One prompt per single-page question, one per page for multi-page tasks.
pub fn build_prompts(manifest: &RunManifest, records: &[QARecord]) -> Result<Vec<FilledPrompt>, RunError> {
    let mut store = PageStore {
        manifest,
        pages: HashMap::new(),
    };
    let multi = manifest.task.is_multi_page();
    let mut prompts = Vec::new();
    for r in records {
        if !multi && r.page_ids.len() != 1 {
            return Err(RunError::Record {
                question_id: r.question_id.clone(),
                message: format!("{} expects one page, got {}", manifest.task, r.page_ids.len()),
            });
        }
        for page_id in &r.page_ids {
            let page = store.get(&r.question_id, page_id)?;
            let with_ctx = |source| RunError::Prompt {
                question_id: r.question_id.clone(),
                source,
            };
            let doc = prompt::document_for(page, manifest.variant, &manifest.layout).map_err(with_ctx)?;
            let p = prompt::fill_template(manifest.task, manifest.variant, &doc, &r.question, &r.question_id)
                .map_err(|source| RunError::Prompt {
                    question_id: r.question_id.clone(),
                    source,
                })?;
            prompts.push(if multi { p.with_page(page_id.clone()) } else { p });
        }
    }
    Ok(prompts)
}

/// Turn completions into one prediction per question. Multi-page questions
/// take the most confident page among those that completed.
pub fn aggregate(
    task: TaskKind,
    records: &[QARecord],
    prompts: &[FilledPrompt],
    results: &[Result<Completion, ClientError>],
) -> (Vec<Prediction>, Vec<RunFailure>) {
    let mut by_question: HashMap<&str, Vec<(&FilledPrompt, &Result<Completion, ClientError>)>> = HashMap::new();
    for (p, r) in prompts.iter().zip(results) {
        by_question.entry(p.question_id.as_str()).or_default().push((p, r));
    }
    let mut preds = Vec::new();
    let mut failures = Vec::new();
    for rec in records {
        let items = by_question.remove(rec.question_id.as_str()).unwrap_or_default();
        let ok: Vec<&Completion> = items.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
        if ok.is_empty() {
            let message = items
                .iter()
                .find_map(|(_, r)| r.as_ref().err().map(ToString::to_string))
                .unwrap_or_else(|| "no prompt was built".to_string());
            failures.push(RunFailure {
                question_id: rec.question_id.clone(),
                message,
            });
            continue;
        }
        if task.is_multi_page() {
            let candidates: Vec<Prediction> = ok
                .iter()
                .map(|c| eval::parse_confident_answer(&rec.question_id, &c.text))
                .collect();
            let best = eval::max_conf_select(&candidates).expect("non-empty").clone();
            preds.push(best);
        } else {
            preds.push(Prediction::new(&rec.question_id, ok[0].text.trim()));
        }
    }
    (preds, failures)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), RunError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct PromptLine<'a> {
    question_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    page_id: Option<&'a str>,
    prompt_hash: String,
    prompt: &'a str,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a AnlsReport,
    failures: &'a [RunFailure],
}

pub fn run_dir_for(manifest: &RunManifest, qa_bytes: &[u8]) -> PathBuf {
    let manifest_json = serde_json::to_string(manifest).expect("manifest serialises");
    let qa = String::from_utf8_lossy(qa_bytes);
    let hash = sha256_hex(&[&manifest_json, &qa]);
    manifest.output_dir.join(format!("run-{}", &hash[..16]))
}

/// Execute a manifest. Per-question backend failures do not abort the run;
/// they are listed in the outcome and score 0.
pub fn run(manifest: &RunManifest) -> Result<RunOutcome, RunError> {
    let qa_bytes = fs::read(&manifest.qa_path).map_err(io_err(&manifest.qa_path))?;
    let records = ocr::load_qa(&qa_bytes)?;
    let prompts = build_prompts(manifest, &records)?;

    let client = ModelClient::new(manifest.backend.clone())?.with_cache(manifest.cache_dir())?;
    let results = client.complete_batch(&prompts);
    let (predictions, failures) = aggregate(manifest.task, &records, &prompts, &results);

    let run_dir = run_dir_for(manifest, &qa_bytes);
    fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    let path = run_dir.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(io_err(&path))?;
    write_jsonl(
        &run_dir.join("prompts.jsonl"),
        prompts.iter().map(|p| PromptLine {
            question_id: &p.question_id,
            page_id: p.page_id.as_deref(),
            prompt_hash: sha256_hex(&[&p.text]),
            prompt: &p.text,
        }),
    )?;
    write_jsonl(
        &run_dir.join("run_log.jsonl"),
        prompts.iter().zip(&results).map(|(p, r)| RunLogEntry::new(p, r)),
    )?;
    write_jsonl(&run_dir.join("predictions.jsonl"), &predictions)?;

    let report = eval::anls_dataset(&predictions, &records, &manifest.anls)?;
    let path = run_dir.join("report.json");
    let body = serde_json::to_string_pretty(&ReportFile {
        report: &report,
        failures: &failures,
    })
    .expect("report serialises");
    fs::write(&path, body).map_err(io_err(&path))?;

    Ok(RunOutcome {
        report,
        run_dir,
        failures,
        backend_calls: client.backend_calls(),
        predictions,
    })
}

pub fn load_predictions(raw: &[u8]) -> Result<Vec<Prediction>, RecordError> {
    String::from_utf8_lossy(raw)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            serde_json::from_str(line).map_err(|e| RecordError::Malformed {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

/// `question_id,score` rows in question-id order.
pub fn write_report_csv<W: Write>(report: &AnlsReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["question_id", "anls"])?;
    for (qid, score) in &report.per_question {
        w.write_record([qid.as_str(), &format!("{score:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::FixtureEntry;
    use crate::ocr::{BBox, TextSegment};

    struct Fixture {
        dir: tempfile::TempDir,
    }

    impl Fixture {
        fn new(records: &[QARecord], pages: &[OcrPage]) -> Self {
            let dir = tempfile::tempdir().unwrap();
            fs::create_dir_all(dir.path().join("ocr")).unwrap();
            for p in pages {
                fs::write(dir.path().join("ocr").join(format!("{}.json", p.page_id)), p.to_canonical_json()).unwrap();
            }
            let qa: String = records
                .iter()
                .map(|r| serde_json::to_string(r).unwrap() + "\n")
                .collect();
            fs::write(dir.path().join("qa.jsonl"), qa).unwrap();
            Fixture { dir }
        }

        fn manifest(&self, task: TaskKind, backend: BackendSpec) -> RunManifest {
            RunManifest {
                task,
                variant: PromptVariant::FULL,
                backend,
                layout: LayoutConfig::default(),
                qa_path: self.dir.path().join("qa.jsonl"),
                ocr_dir: self.dir.path().join("ocr"),
                ocr_format: OcrFormat::Canonical,
                granularity: Granularity::Line,
                output_dir: self.dir.path().join("out"),
                cache_dir: None,
                seed: 0,
                anls: AnlsOptions::default(),
            }
        }
    }

    fn page(id: &str, words: &[&str]) -> OcrPage {
        OcrPage::new(
            id,
            words
                .iter()
                .enumerate()
                .map(|(i, w)| TextSegment::new(*w, BBox::new(60.0 * i as f64, 0.0, 60.0 * i as f64 + 40.0, 10.0)))
                .collect(),
        )
    }

    fn record(id: &str, pages: &[&str], gold: &str) -> QARecord {
        QARecord {
            question_id: id.into(),
            question: format!("question {id}?"),
            page_ids: pages.iter().map(|p| p.to_string()).collect(),
            gold_answers: vec![gold.into()],
            group: None,
        }
    }

    #[test]
    fn exact_fixture_answers_score_one() {
        let f = Fixture::new(
            &[record("q1", &["p1"], "abc"), record("q2", &["p2"], "1988")],
            &[page("p1", &["abc", "def"]), page("p2", &["Year", "1988"])],
        );
        let m = f.manifest(TaskKind::DocVqa, BackendSpec::mock_fixture([("q1", "abc"), ("q2", "1988")]));
        let out = run(&m).unwrap();
        assert_eq!(out.report.mean, 1.0);
        assert!(out.failures.is_empty());
        for name in ["manifest.json", "prompts.jsonl", "run_log.jsonl", "predictions.jsonl", "report.json"] {
            assert!(out.run_dir.join(name).exists(), "{name}");
        }
    }

    #[test]
    fn wrong_answer_is_zeroed() {
        let f = Fixture::new(
            &[record("q1", &["p1"], "abc"), record("q2", &["p2"], "1988")],
            &[page("p1", &["abc"]), page("p2", &["1988"])],
        );
        let m = f.manifest(TaskKind::DocVqa, BackendSpec::mock_fixture([("q1", "zzz"), ("q2", "1988")]));
        assert_eq!(run(&m).unwrap().report.mean, 0.5);
    }

    #[test]
    fn multi_page_max_conf() {
        let f = Fixture::new(
            &[record("q1", &["a", "b"], "right")],
            &[page("a", &["wrong"]), page("b", &["right"])],
        );
        let m = f.manifest(
            TaskKind::MpDocVqa,
            BackendSpec::mock_fixture([("q1/a", "30, wrong"), ("q1/b", "90, right")]),
        );
        let out = run(&m).unwrap();
        assert_eq!(out.predictions[0].answer, "right");
        assert_eq!(out.predictions[0].confidence, Some(90));
        assert_eq!(out.report.mean, 1.0);
    }

    #[test]
    fn backend_failure_is_recorded_not_fatal() {
        let f = Fixture::new(
            &[record("q1", &["p1"], "abc"), record("q2", &["p2"], "x")],
            &[page("p1", &["abc"]), page("p2", &["x"])],
        );
        let mut spec = BackendSpec::mock_fixture([("q1", "abc")]);
        spec.fixture.insert("q2".into(), FixtureEntry::Error { error: "boom".into() });
        let out = run(&f.manifest(TaskKind::DocVqa, spec)).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].question_id, "q2");
        assert_eq!(out.report.mean, 0.5);
        let log = fs::read_to_string(out.run_dir.join("run_log.jsonl")).unwrap();
        assert!(log.contains("boom"));
    }

    #[test]
    fn single_page_task_rejects_multiple_pages() {
        let f = Fixture::new(&[record("q1", &["a", "b"], "x")], &[page("a", &["x"]), page("b", &["y"])]);
        let err = run(&f.manifest(TaskKind::DocVqa, BackendSpec::mock_echo())).unwrap_err();
        assert!(matches!(err, RunError::Record { ref question_id, .. } if question_id == "q1"));
    }

    #[test]
    fn missing_page_names_file() {
        let f = Fixture::new(&[record("q1", &["nope"], "x")], &[]);
        let err = run(&f.manifest(TaskKind::DocVqa, BackendSpec::mock_echo())).unwrap_err();
        assert!(err.to_string().contains("nope.json"));
    }

    #[test]
    fn manifest_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(
            &path,
            r#"{"task":"docvqa","qa_path":"qa.jsonl","ocr_dir":"ocr","output_dir":"/abs/out"}"#,
        )
        .unwrap();
        let m = RunManifest::load(&path).unwrap();
        assert_eq!(m.qa_path, dir.path().join("qa.jsonl"));
        assert_eq!(m.output_dir, PathBuf::from("/abs/out"));
        assert_eq!(m.variant, PromptVariant::FULL);
        assert_eq!(m.cache_dir(), PathBuf::from("/abs/out/cache"));
    }

    #[test]
    fn report_csv() {
        let mut report = AnlsReport {
            per_question: Default::default(),
            mean: 0.5,
            count: 2,
            missing: vec![],
            per_group: Default::default(),
        };
        report.per_question.insert("a".into(), 1.0);
        report.per_question.insert("b".into(), 0.0);
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "question_id,anls\na,1.000000\nb,0.000000\n");
    }
}
